#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "pointdisc/blocks.hpp"
#include "pointdisc/geom.hpp"

namespace pointdisc {

enum class LayerId : std::size_t { l1 = 0, l2 = 1, l3 = 2, global = 3 };
inline constexpr std::size_t kLayerCount = 4;
inline constexpr std::array<const char*, kLayerCount> kLayerNames{"l1", "l2", "l3", "global"};

LayerId parse_layer_id(const std::string& name);

struct LayerSpec {
    std::string id;
    std::size_t centroids = 0;
    double radius = 0.0;  // grouping radius; 0 on the global layer
    std::size_t neighbors = 0;
    std::vector<std::size_t> mlp;
    bool global = false;
};

struct EncoderSpec {
    std::size_t input_points = 512;
    std::array<LayerSpec, kLayerCount> layers;
    std::size_t adapt_dim = 256;

    // N=512 -> l1(128, r 0.25, 32 nbrs, mlp 32/32/64) -> l2(32, r 0.5, 32,
    // 64/64/128) -> l3(8, r 0.8, 16, 128/128/256) -> global(256/256)
    static EncoderSpec desk_default();
    void validate() const;
    std::size_t out_channels(LayerId l) const { return layers[std::size_t(l)].mlp.back(); }
};

// Per-cloud view of one layer's output.
struct LayerFeatures {
    std::vector<Vec3> centroids;
    RowMat features;  // N_l x C_l
    double receptive_radius = 0.0;
};

// One layer's output for a whole batch; cloud c owns rows
// [c*per_cloud, (c+1)*per_cloud).
struct BatchLayer {
    std::vector<Vec3> centroids;
    RowMat features;
    double receptive_radius = 0.0;
    std::size_t per_cloud = 0;
};

struct EncodeOut {
    std::array<BatchLayer, kLayerCount> layers;
    std::size_t n_clouds = 0;

    LayerFeatures per_cloud(std::size_t cloud, LayerId l) const;
};

// Activation record of one set-abstraction stage batch. stage_io[k] is the
// input to linear k; stage_io[k+1] doubles as relu-k output and backward mask.
struct SaTape {
    Segments seg;
    std::vector<std::size_t> member_src_rows;  // per grouped row, source row id
    std::vector<RowMat> stage_io;
    std::vector<BnCache> bn_caches;
    MaxPoolCache pool;
    std::size_t src_rows = 0;
    std::size_t in_channels = 0;
};

// FPS centroids + radius grouping + shared per-point MLP + max pool.
struct SetAbstraction {
    LayerSpec spec;
    std::size_t in_channels = 0;
    std::vector<Param> ws, bs;
    std::vector<BatchNorm> bns;

    SetAbstraction(const LayerSpec& s, std::size_t in_ch);

    void init_params(Rng& rng);

    // src_points: n_clouds blocks of equal size; src_feats may have 0 columns.
    BatchLayer forward(std::span<const Vec3> src_points, const RowMat& src_feats,
                       std::size_t n_clouds, Mode mode, bool update_stats, SaTape* tape);

    // Accumulates the gradient w.r.t. source features (coordinates are data).
    RowMat backward(const SaTape& tape, const RowMat& dpooled);

    void visit_params(const std::function<void(const std::string&, Param&)>& f,
                      const std::string& prefix);
    void visit_state(const std::function<void(const std::string&, Tensor&)>& f,
                     const std::string& prefix);
};

// relu0 feeds the second linear; relu1 feeds the row normalization.
struct AdaptTape {
    RowMat x0, relu0, relu1;
    BnCache bn0, bn1;
};

// linear(C_l -> D) -> BN -> ReLU -> linear(D -> D) -> BN -> ReLU -> row L2 norm.
struct AdaptMlp {
    Param w0, b0, w1, b1;
    BatchNorm bn0, bn1;

    AdaptMlp(std::size_t in_ch, std::size_t d);

    void init_params(Rng& rng);
    RowMat forward(const RowMat& x, Mode mode, bool update_stats, AdaptTape* tape);
    RowMat backward(const AdaptTape& tape, const RowMat& dz);

    void visit_params(const std::function<void(const std::string&, Param&)>& f,
                      const std::string& prefix);
    void visit_state(const std::function<void(const std::string&, Tensor&)>& f,
                     const std::string& prefix);
};

struct EncodeTape {
    std::array<SaTape, kLayerCount> sa;
    EncodeOut out;  // layer outputs are re-used by the backward pass
};

struct AdaptAllTape {
    std::array<AdaptTape, kLayerCount> layer;
};

// The full backbone: four set-abstraction stages plus one adaptation MLP per
// stage mapping into the shared D-dimensional, unit-norm feature space.
struct Encoder {
    EncoderSpec spec;
    std::vector<SetAbstraction> sa;  // l1, l2, l3, global
    std::vector<AdaptMlp> adapt;

    explicit Encoder(const EncoderSpec& s, std::uint64_t init_seed = 0);

    EncodeOut encode_batch(const std::vector<PointCloud>& clouds, Mode mode, bool update_stats,
                           EncodeTape* tape);
    EncodeOut encode(const PointCloud& cloud, Mode mode = Mode::eval);

    // dfeat[l] has the shape of EncodeOut.layers[l].features (zero allowed).
    void encode_backward(const EncodeTape& tape, std::array<RowMat, kLayerCount> dfeat);

    // Adapted (unit-norm) features for every layer of a previous encode.
    std::array<RowMat, kLayerCount> adapt_all(const EncodeOut& out, Mode mode, bool update_stats,
                                              AdaptAllTape* tape);
    // Returns d(encoder features) per layer for encode_backward.
    std::array<RowMat, kLayerCount> adapt_backward(const AdaptAllTape& tape,
                                                   const std::array<RowMat, kLayerCount>& dz);

    void visit_params(const std::function<void(const std::string&, Param&)>& f);
    void visit_state(const std::function<void(const std::string&, Tensor&)>& f);
    void zero_grad();
};

}  // namespace pointdisc
