#include "pointdisc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "pointdisc/error.hpp"

namespace pointdisc {

Vec extract_features(Model& model, const PointCloud& cloud) {
    EncodeTape tape;
    model.encoder.encode_batch({cloud}, Mode::eval, false, &tape);
    const auto z = model.encoder.adapt_all(tape.out, Mode::eval, false, nullptr);
    const std::size_t d = model.encoder.spec.adapt_dim;
    Vec out(static_cast<Eigen::Index>(kLayerCount * d));
    for (std::size_t l = 0; l < kLayerCount; ++l)
        out.segment(static_cast<Eigen::Index>(l * d), static_cast<Eigen::Index>(d)) =
            z[l].colwise().maxCoeff().transpose();
    return out;
}

FeatureSet extract_dataset_features(Model& model, const Dataset& ds) {
    FeatureSet fs;
    if (ds.clouds.empty()) return fs;
    const auto dim = static_cast<Eigen::Index>(kLayerCount * model.encoder.spec.adapt_dim);
    fs.x = RowMat(static_cast<Eigen::Index>(ds.clouds.size()), dim);
    fs.y.reserve(ds.clouds.size());
    for (std::size_t i = 0; i < ds.clouds.size(); ++i) {
        fs.x.row(static_cast<Eigen::Index>(i)) =
            extract_features(model, normalize_cloud(ds.clouds[i])).transpose();
        fs.y.push_back(ds.clouds[i].label.value_or(0));
    }
    return fs;
}

// ---------------------------------------------------------------------------
// linear probe
// ---------------------------------------------------------------------------

LogisticModel logistic_fit(const FeatureSet& train, std::size_t n_classes, double lambda,
                           std::size_t max_iters, double grad_tol, std::uint64_t init_seed,
                           double init_scale) {
    const auto n = train.x.rows();
    if (n < 1) throw InvalidInputError("logistic_fit: empty training set");
    if (train.y.size() != static_cast<std::size_t>(n))
        throw InvalidInputError("logistic_fit: feature/label count mismatch");
    std::vector<bool> seen(n_classes, false);
    for (auto y : train.y) {
        if (y >= n_classes) throw InvalidInputError("logistic_fit: label out of range");
        seen[y] = true;
    }
    if (std::count(seen.begin(), seen.end(), true) < 2)
        throw InvalidInputError("logistic_fit: training set needs at least 2 classes");

    const auto f = train.x.cols();
    const auto c = static_cast<Eigen::Index>(n_classes);
    LogisticModel model;
    model.w = RowMat::Zero(c, f);
    model.b = Vec::Zero(c);
    if (init_scale > 0.0) {
        Rng rng = derive_rng(init_seed, StreamTag::param_init, 0x11);
        for (Eigen::Index i = 0; i < model.w.size(); ++i)
            model.w.data()[i] = init_scale * rng.normal();
        for (Eigen::Index i = 0; i < c; ++i) model.b(i) = init_scale * rng.normal();
    }

    // softmax Hessian is bounded by I/2, so this step size is safe
    const double max_sq = train.x.rowwise().squaredNorm().maxCoeff();
    const double lr = 1.0 / (0.5 * std::max(1.0, max_sq) + lambda);
    const double inv_n = 1.0 / static_cast<double>(n);

    for (std::size_t iter = 0; iter < max_iters; ++iter) {
        RowMat logits = train.x * model.w.transpose();
        logits.rowwise() += model.b.transpose();
        // row-wise softmax with max subtraction
        RowMat probs = logits;
        double loss = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double mx = probs.row(i).maxCoeff();
            probs.row(i) = (probs.row(i).array() - mx).exp();
            const double denom = probs.row(i).sum();
            probs.row(i) /= denom;
            loss -= std::log(std::max(probs(i, static_cast<Eigen::Index>(train.y[i])),
                                      std::numeric_limits<double>::min()));
        }
        loss = loss * inv_n + 0.5 * lambda * model.w.squaredNorm();

        RowMat delta = probs;  // softmax - onehot
        for (Eigen::Index i = 0; i < n; ++i)
            delta(i, static_cast<Eigen::Index>(train.y[i])) -= 1.0;
        RowMat gw = inv_n * (delta.transpose() * train.x) + lambda * model.w;
        Vec gb = inv_n * delta.colwise().sum().transpose();

        const double gnorm = std::sqrt(gw.squaredNorm() + gb.squaredNorm());
        model.final_loss = loss;
        model.final_grad_norm = gnorm;
        model.iterations = iter + 1;
        if (gnorm <= grad_tol) break;
        model.w -= lr * gw;
        model.b -= lr * gb;
    }
    return model;
}

double logistic_accuracy(const LogisticModel& m, const FeatureSet& data) {
    const auto n = data.x.rows();
    if (n == 0) return 0.0;
    std::size_t correct = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index best = 0;
        (data.x.row(i) * m.w.transpose() + m.b.transpose()).maxCoeff(&best);
        if (static_cast<std::uint32_t>(best) == data.y[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

LinearProbeResult linear_probe(const FeatureSet& train, const FeatureSet& val,
                               const FeatureSet& test) {
    std::size_t n_classes = 0;
    for (auto y : train.y) n_classes = std::max<std::size_t>(n_classes, y + 1);
    for (auto y : val.y) n_classes = std::max<std::size_t>(n_classes, y + 1);
    for (auto y : test.y) n_classes = std::max<std::size_t>(n_classes, y + 1);

    const double grid[] = {1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0};
    LinearProbeResult best;
    best.val_accuracy = -1.0;
    for (double lambda : grid) {
        const LogisticModel m = logistic_fit(train, n_classes, lambda);
        const double va = logistic_accuracy(m, val);
        if (va > best.val_accuracy) {
            best.val_accuracy = va;
            best.lambda = lambda;
            best.test_accuracy = logistic_accuracy(m, test);
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// distances
// ---------------------------------------------------------------------------

double mean_nn_distance(std::span<const Vec3> set_a, std::span<const Vec3> set_b) {
    if (set_a.empty() || set_b.empty())
        throw InvalidInputError("mean_nn_distance: empty point set");
    double total = 0.0;
    for (const auto& a : set_a) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& b : set_b) best = std::min(best, (a - b).squaredNorm());
        total += std::sqrt(best);
    }
    return total / static_cast<double>(set_a.size());
}

double chamfer_distance(std::span<const Vec3> set_a, std::span<const Vec3> set_b) {
    return 0.5 * (mean_nn_distance(set_a, set_b) + mean_nn_distance(set_b, set_a));
}

// ---------------------------------------------------------------------------
// shape probe
// ---------------------------------------------------------------------------

ProbeResult shape_probe(Model& model, const PointCloud& cloud, LayerId layer,
                        std::size_t centroid_index, std::size_t n_samples, std::size_t top_k,
                        std::uint64_t seed) {
    if (n_samples < 1 || top_k < 1 || top_k > n_samples)
        throw InvalidInputError("shape_probe: need 1 <= top_k <= n_samples");

    EncodeTape tape;
    model.encoder.encode_batch({cloud}, Mode::eval, false, &tape);
    const auto z = model.encoder.adapt_all(tape.out, Mode::eval, false, nullptr);
    const auto li = std::size_t(layer);
    const auto rows = static_cast<std::size_t>(z[li].rows());
    if (centroid_index >= rows)
        throw InvalidInputError("shape_probe: centroid index " + std::to_string(centroid_index) +
                                " out of range for layer " + kLayerNames[li]);

    ProbeResult res;
    res.layer = layer;
    res.centroid = tape.out.layers[li].centroids[centroid_index];
    if (layer == LayerId::global) {
        res.region_members.resize(cloud.size());
        std::iota(res.region_members.begin(), res.region_members.end(), 0);
    } else {
        res.region_members =
            radius_members(cloud, res.centroid, tape.out.layers[li].receptive_radius);
    }
    if (res.region_members.empty()) throw InvalidInputError("shape_probe: empty region");

    Rng rng = derive_rng(seed, StreamTag::probe, centroid_index, li);
    res.samples.reserve(n_samples);
    ConsBatch batch;
    batch.z = z[li].row(static_cast<Eigen::Index>(centroid_index));
    batch.p = RowMat(static_cast<Eigen::Index>(n_samples), 3);
    batch.seg = Segments::uniform(1, n_samples);
    for (std::size_t i = 0; i < n_samples; ++i) {
        const Vec3 p(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
        res.samples.push_back(p);
        batch.p.row(static_cast<Eigen::Index>(i)) = p.transpose();
    }
    res.scores =
        model.consistency.net_for(layer).forward(batch, Mode::eval, false, nullptr);

    std::vector<std::size_t> order(n_samples);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return res.scores(static_cast<Eigen::Index>(a)) > res.scores(static_cast<Eigen::Index>(b));
    });
    res.top_points.reserve(top_k);
    res.top_scores.reserve(top_k);
    for (std::size_t i = 0; i < top_k; ++i) {
        res.top_points.push_back(res.samples[order[i]]);
        res.top_scores.push_back(res.scores(static_cast<Eigen::Index>(order[i])));
    }

    std::vector<Vec3> member_points;
    member_points.reserve(res.region_members.size());
    for (std::size_t idx : res.region_members) member_points.push_back(cloud.points[idx]);
    res.top_k_distance = mean_nn_distance(res.top_points, member_points);

    Rng control_rng = derive_rng(seed, StreamTag::probe_control, centroid_index, li);
    std::vector<Vec3> control;
    control.reserve(top_k);
    for (std::size_t i = 0; i < top_k; ++i)
        control.emplace_back(control_rng.uniform(-1.0, 1.0), control_rng.uniform(-1.0, 1.0),
                             control_rng.uniform(-1.0, 1.0));
    res.control_distance = mean_nn_distance(control, member_points);
    return res;
}

// ---------------------------------------------------------------------------
// PLY export
// ---------------------------------------------------------------------------

void export_probe_ply(const ProbeResult& result, const PointCloud& cloud,
                      const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw FormatError("export_probe_ply: cannot open " + path.string());
    const std::size_t count =
        cloud.size() + result.region_members.size() + result.top_points.size();
    os << "ply\nformat ascii 1.0\n";
    os << "comment pointdisc shape probe (gray input, green region, red top-k)\n";
    os << "element vertex " << count << "\n";
    os << "property float x\nproperty float y\nproperty float z\n";
    os << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    os << "property float score\nend_header\n";
    os.precision(9);
    for (const auto& p : cloud.points)
        os << p.x() << " " << p.y() << " " << p.z() << " 128 128 128 0\n";
    for (std::size_t idx : result.region_members) {
        const auto& p = cloud.points[idx];
        os << p.x() << " " << p.y() << " " << p.z() << " 0 255 0 0\n";
    }
    for (std::size_t i = 0; i < result.top_points.size(); ++i) {
        const auto& p = result.top_points[i];
        os << p.x() << " " << p.y() << " " << p.z() << " 255 0 0 " << result.top_scores[i]
           << "\n";
    }
    if (!os) throw FormatError("export_probe_ply: write failed for " + path.string());
}

std::vector<PlyVertex> read_probe_ply(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("read_probe_ply: cannot open " + path.string());
    std::string line;
    if (!std::getline(is, line) || line != "ply")
        throw FormatError("read_probe_ply: missing ply magic");
    std::size_t count = 0;
    bool ascii = false;
    while (std::getline(is, line)) {
        if (line == "end_header") break;
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "format") {
            std::string fmt;
            ls >> fmt;
            ascii = fmt == "ascii";
        } else if (word == "element") {
            std::string what;
            ls >> what >> count;
            if (what != "vertex") throw FormatError("read_probe_ply: unsupported element");
        }
    }
    if (!ascii) throw FormatError("read_probe_ply: not an ascii ply");
    std::vector<PlyVertex> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        PlyVertex v;
        if (!(is >> v.x >> v.y >> v.z >> v.r >> v.g >> v.b >> v.score))
            throw FormatError("read_probe_ply: truncated vertex data");
        out.push_back(v);
    }
    return out;
}

void append_probe_csv(const std::filesystem::path& path, std::size_t probe_id,
                      const ProbeResult& result, const std::string& header_comments) {
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    std::ofstream os(path, std::ios::app);
    if (!os) throw FormatError("append_probe_csv: cannot open " + path.string());
    if (fresh) {
        if (!header_comments.empty()) {
            std::istringstream echo(header_comments);
            for (std::string line; std::getline(echo, line);) os << "# " << line << "\n";
        }
        os << "probe_id,layer,top_k_dist,control_dist\n";
    }
    os.precision(17);
    os << probe_id << "," << kLayerNames[std::size_t(result.layer)] << ","
       << result.top_k_distance << "," << result.control_distance << "\n";
}

}  // namespace pointdisc
