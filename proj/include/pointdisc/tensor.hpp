#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "pointdisc/error.hpp"

namespace pointdisc {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using Vec3 = Eigen::Vector3d;

// 64-byte-aligned storage keeps every mapped buffer on the same SIMD
// alignment, so vectorized reductions split identically across runs and
// training stays bit-reproducible.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) {}

    T* allocate(std::size_t n) {
        return static_cast<T*>(::operator new(n * sizeof(T), kAlign));
    }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const {
        return true;
    }
};

using AlignedF64 = std::vector<double, AlignedAllocator<double>>;

// Row-major f64 buffer with an explicit shape; the unit of parameter storage,
// checkpointing and gradient accumulation.
struct Tensor {
    std::vector<std::size_t> shape;
    AlignedF64 data;

    Tensor() = default;
    Tensor(std::initializer_list<std::size_t> s) : shape(s) { data.assign(numel_of(shape), 0.0); }
    explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
        data.assign(numel_of(shape), 0.0);
    }

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
    }

    std::size_t numel() const { return data.size(); }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

inline Eigen::Map<RowMat> as_mat(Tensor& t) {
    if (t.shape.size() != 2) throw InvalidInputError("as_mat: tensor is not 2-D");
    return {t.data.data(), static_cast<Eigen::Index>(t.shape[0]),
            static_cast<Eigen::Index>(t.shape[1])};
}

inline Eigen::Map<const RowMat> as_mat(const Tensor& t) {
    if (t.shape.size() != 2) throw InvalidInputError("as_mat: tensor is not 2-D");
    return {t.data.data(), static_cast<Eigen::Index>(t.shape[0]),
            static_cast<Eigen::Index>(t.shape[1])};
}

inline Eigen::Map<Vec> as_vec(Tensor& t) {
    return {t.data.data(), static_cast<Eigen::Index>(t.numel())};
}

inline Eigen::Map<const Vec> as_vec(const Tensor& t) {
    return {t.data.data(), static_cast<Eigen::Index>(t.numel())};
}

// A trainable tensor paired with its gradient accumulator.
struct Param {
    Tensor value;
    Tensor grad;

    Param() = default;
    explicit Param(std::initializer_list<std::size_t> s) : value(s), grad(s) {}

    void zero_grad() { grad.fill(0.0); }
};

enum class Mode { train, eval };

}  // namespace pointdisc
