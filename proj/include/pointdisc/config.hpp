#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pointdisc/encoder.hpp"
#include "pointdisc/loss.hpp"
#include "pointdisc/train.hpp"

namespace pointdisc {

enum class ConfigType { integer, floating, boolean, text, choice };

struct ConfigKey {
    std::string name;
    ConfigType type = ConfigType::text;
    std::string default_value;
    std::vector<std::string> choices;  // choice type only
    std::string doc;
};

// Flat dotted-key configuration with a fixed schema: unknown keys are rejected
// by name, every key has a documented default, and the resolved state echoes
// verbatim into checkpoints and CSV headers.
class Config {
  public:
    static const std::vector<ConfigKey>& schema();
    static const ConfigKey& key_info(const std::string& name);

    Config();  // defaults

    void set(const std::string& key, const std::string& value, int line = 0);

    std::int64_t get_int(const std::string& key) const;
    double get_float(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    const std::string& get(const std::string& key) const;

    // line-oriented "key = value" with # comments, applied over defaults
    static Config parse(const std::string& text);
    // "key=value" pairs from --set flags
    void apply_override(const std::string& assignment);

    std::string echo() const;  // schema-ordered "key = value" listing
    std::map<std::string, std::string> diff(const Config& other) const;

  private:
    std::map<std::string, std::string> values_;
};

// config -> domain objects
EncoderSpec encoder_spec_from(const Config& cfg);
LossConfig loss_config_from(const Config& cfg);
TrainConfig train_config_from(const Config& cfg);
Model model_from(const Config& cfg, std::uint64_t init_seed);

}  // namespace pointdisc
