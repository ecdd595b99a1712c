#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <vector>

#include "ltnn/error.hpp"

namespace ltnn {

using Index = std::int64_t;

template <class Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <class Scalar>
using MatMap = Eigen::Map<MatrixX<Scalar>>;
template <class Scalar>
using ConstMatMap = Eigen::Map<const MatrixX<Scalar>>;
template <class Scalar>
using VecMap = Eigen::Map<VectorX<Scalar>>;
template <class Scalar>
using ConstVecMap = Eigen::Map<const VectorX<Scalar>>;

inline Index checked_numel(const std::vector<Index>& dims) {
  Index n = 1;
  for (Index d : dims) {
    require(d > 0, Errc::invalid_argument, "tensor extents must be positive");
    n *= d;
  }
  return n;
}

inline std::string dims_str(const std::vector<Index>& dims) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < dims.size(); ++i) os << (i ? "," : "") << dims[i];
  os << "]";
  return os.str();
}

// Dense row-major tensor. Flat storage order is the order the values occupy
// memory, which is also the order patch offsets and mask indices refer to.
template <class Scalar>
struct Tensor {
  std::vector<Index> dims;
  std::vector<Scalar> data;

  Tensor() = default;
  explicit Tensor(std::vector<Index> d) : dims(std::move(d)), data(checked_numel(dims), Scalar(0)) {}
  Tensor(std::vector<Index> d, std::vector<Scalar> values) : dims(std::move(d)), data(std::move(values)) {
    require(checked_numel(dims) == static_cast<Index>(data.size()), Errc::shape_mismatch,
            "value count does not match dims " + dims_str(dims));
  }

  Index numel() const { return static_cast<Index>(data.size()); }
  int rank() const { return static_cast<int>(dims.size()); }
  Index dim(int i) const { return dims.at(static_cast<size_t>(i)); }

  // Number of records when the leading dim is a batch dimension.
  Index rows() const { return dims.empty() ? 0 : dims[0]; }
  Index row_size() const { return dims.empty() ? 0 : numel() / dims[0]; }

  MatMap<Scalar> mat(Index r, Index c) {
    require(r * c == numel(), Errc::shape_mismatch, "cannot view " + dims_str(dims) + " as matrix");
    return MatMap<Scalar>(data.data(), r, c);
  }
  ConstMatMap<Scalar> mat(Index r, Index c) const {
    require(r * c == numel(), Errc::shape_mismatch, "cannot view " + dims_str(dims) + " as matrix");
    return ConstMatMap<Scalar>(data.data(), r, c);
  }
  VecMap<Scalar> vec() { return VecMap<Scalar>(data.data(), numel()); }
  ConstVecMap<Scalar> vec() const { return ConstVecMap<Scalar>(data.data(), numel()); }

  bool same_dims(const Tensor& o) const { return dims == o.dims; }
};

template <class Scalar>
bool all_finite(const Tensor<Scalar>& t) {
  return t.vec().allFinite();
}

template <class Scalar>
void require_finite(const Tensor<Scalar>& t, const char* what) {
  require(all_finite(t), Errc::nonfinite_value, std::string("non-finite values in ") + what);
}

template <class To, class From>
Tensor<To> cast_tensor(const Tensor<From>& t) {
  Tensor<To> out(t.dims);
  for (Index i = 0; i < t.numel(); ++i) out.data[static_cast<size_t>(i)] = static_cast<To>(t.data[static_cast<size_t>(i)]);
  return out;
}

}  // namespace ltnn
