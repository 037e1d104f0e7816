#pragma once

namespace pointdisc {

// Subcommand dispatch: gen-data, convert-off, pretrain, linear-eval,
// shape-probe, ablate, gradcheck. Exit codes: 0 success, 1 runtime/data
// error, 2 usage error. Diagnostics go to stderr; machine-readable output
// goes to files only.
int run_cli(int argc, const char* const* argv);

}  // namespace pointdisc
