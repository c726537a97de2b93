#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "eegdwt/errors.hpp"
#include "eegdwt/rng.hpp"

namespace eegdwt {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

// Dense row-major (C-order) tensor of doubles. All operations in this
// library keep tensors contiguous; views are materialized by copy.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), 0.0);
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_)) {
      throw ArgumentError(detail::str("tensor data length ", data_.size(),
                                      " does not match shape ",
                                      shape_str(shape_)));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = rng.normal() * stddev;
    return t;
  }

  static Tensor rand_uniform(Shape shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = rng.uniform(lo, hi);
    return t;
  }

  static Tensor identity(std::int64_t n) {
    Tensor t({n, n});
    for (std::int64_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
    return t;
  }

  bool defined() const { return !shape_.empty() || !data_.empty(); }
  const Shape& shape() const { return shape_; }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t dim(std::int64_t i) const {
    if (i < 0) i += rank();
    return shape_.at(static_cast<std::size_t>(i));
  }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  double& at(std::int64_t i) { return data_[check_index({i})]; }
  double& at(std::int64_t i, std::int64_t j) { return data_[check_index({i, j})]; }
  double& at(std::int64_t i, std::int64_t j, std::int64_t k) {
    return data_[check_index({i, j, k})];
  }
  double& at(std::int64_t i, std::int64_t j, std::int64_t k, std::int64_t l) {
    return data_[check_index({i, j, k, l})];
  }
  double at(std::int64_t i) const { return data_[check_index({i})]; }
  double at(std::int64_t i, std::int64_t j) const { return data_[check_index({i, j})]; }
  double at(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return data_[check_index({i, j, k})];
  }
  double at(std::int64_t i, std::int64_t j, std::int64_t k, std::int64_t l) const {
    return data_[check_index({i, j, k, l})];
  }

  Tensor reshaped(Shape new_shape) const {
    if (shape_numel(new_shape) != numel()) {
      throw ArgumentError(detail::str("cannot reshape ", shape_str(shape_),
                                      " to ", shape_str(new_shape)));
    }
    return Tensor(std::move(new_shape), data_);
  }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  double sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
  }

  double squared_norm() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return s;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  void validate_shape() const {
    for (auto d : shape_) {
      if (d < 0) {
        throw ArgumentError(detail::str("negative dimension in shape ",
                                        shape_str(shape_)));
      }
    }
  }

  std::size_t check_index(std::initializer_list<std::int64_t> idx) const {
    if (static_cast<std::int64_t>(idx.size()) != rank()) {
      throw ArgumentError(detail::str("index rank ", idx.size(),
                                      " vs tensor rank ", rank()));
    }
    std::size_t off = 0;
    std::size_t axis = 0;
    for (auto i : idx) {
      if (i < 0 || i >= shape_[axis]) {
        throw ArgumentError(detail::str("index ", i, " out of range for axis ",
                                        axis, " of ", shape_str(shape_)));
      }
      off = off * static_cast<std::size_t>(shape_[axis]) + static_cast<std::size_t>(i);
      ++axis;
    }
    return off;
  }

  Shape shape_;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// elementwise math with NumPy-style right-aligned broadcasting

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ArgumentError(detail::str("shapes ", shape_str(a), " and ",
                                      shape_str(b), " are not broadcastable"));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Strides of `s` viewed as shape `out` (0 on broadcast axes).
inline std::vector<std::int64_t> broadcast_strides(const Shape& s, const Shape& out) {
  std::vector<std::int64_t> strides(out.size(), 0);
  std::int64_t acc = 1;
  for (std::size_t i = s.size(); i-- > 0;) {
    const std::size_t oi = i + (out.size() - s.size());
    strides[oi] = (s[i] == 1 && out[oi] != 1) ? 0 : acc;
    acc *= s[i];
  }
  return strides;
}

template <typename F>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, F&& f) {
  if (a.shape() == b.shape()) {
    Tensor out(a.shape());
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
    return out;
  }
  const Shape os = broadcast_shape(a.shape(), b.shape());
  Tensor out(os);
  const auto sa = broadcast_strides(a.shape(), os);
  const auto sb = broadcast_strides(b.shape(), os);
  const std::size_t r = os.size();
  std::vector<std::int64_t> idx(r, 0);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const std::int64_t n = out.numel();
  std::int64_t oa = 0;
  std::int64_t ob = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    po[i] = f(pa[oa], pb[ob]);
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      oa += sa[ax];
      ob += sb[ax];
      if (idx[ax] < os[ax]) break;
      oa -= sa[ax] * os[ax];
      ob -= sb[ax] * os[ax];
      idx[ax] = 0;
    }
  }
  return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::broadcast_binary(a, b, [](double x, double y) { return x + y; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::broadcast_binary(a, b, [](double x, double y) { return x - y; });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::broadcast_binary(a, b, [](double x, double y) { return x * y; });
}
inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::broadcast_binary(a, b, [](double x, double y) { return x / y; });
}
inline Tensor scale(const Tensor& a, double c) {
  Tensor out = a;
  for (auto& v : out.raw()) v *= c;
  return out;
}

// Sums `t` down to `target` shape (reverse of broadcasting).
inline Tensor reduce_to(const Tensor& t, const Shape& target) {
  if (t.shape() == target) return t;
  const Shape& os = t.shape();
  Tensor out(target);
  const auto st = detail::broadcast_strides(target, os);
  const std::size_t r = os.size();
  std::vector<std::int64_t> idx(r, 0);
  const double* pt = t.data();
  double* po = out.data();
  const std::int64_t n = t.numel();
  std::int64_t oo = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    po[oo] += pt[i];
    for (std::size_t ax = r; ax-- > 0;) {
      ++idx[ax];
      oo += st[ax];
      if (idx[ax] < os[ax]) break;
      oo -= st[ax] * os[ax];
      idx[ax] = 0;
    }
  }
  return out;
}

// (m,k) x (k,n) -> (m,n)
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ArgumentError(detail::str("matmul shape mismatch: ",
                                    shape_str(a.shape()), " x ",
                                    shape_str(b.shape())));
  }
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const double av = pa[i * k + kk];
      if (av == 0.0) continue;
      const double* brow = pb + kk * n;
      double* orow = po + i * n;
      for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

inline Tensor transpose2d(const Tensor& a) {
  if (a.rank() != 2) throw ArgumentError("transpose2d expects rank-2 tensor");
  const std::int64_t m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return out;
}

inline double dot_rows(const Tensor& a, std::int64_t i, const Tensor& b, std::int64_t j) {
  const std::int64_t d = a.dim(1);
  const double* pa = a.data() + i * d;
  const double* pb = b.data() + j * d;
  double s = 0.0;
  for (std::int64_t k = 0; k < d; ++k) s += pa[k] * pb[k];
  return s;
}

// L2-normalizes each row of a (N,D) matrix in place; returns the row norms.
inline std::vector<double> l2_normalize_rows_inplace(Tensor& m, double eps = 0.0) {
  if (m.rank() != 2) throw ArgumentError("l2_normalize_rows expects rank-2 tensor");
  const std::int64_t n = m.dim(0), d = m.dim(1);
  std::vector<double> norms(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    double* row = m.data() + i * d;
    for (std::int64_t k = 0; k < d; ++k) s += row[k] * row[k];
    const double nrm = std::sqrt(s);
    norms[static_cast<std::size_t>(i)] = nrm;
    const double inv = 1.0 / std::max(nrm, eps > 0.0 ? eps : 1e-300);
    for (std::int64_t k = 0; k < d; ++k) row[k] *= inv;
  }
  return norms;
}

// ---------------------------------------------------------------------------
// raw float32 file format: little-endian, C-order, no header. Shapes are
// carried externally (manifest or sidecar).

namespace f32io {

inline void encode_f32le(float f, unsigned char out[4]) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  out[0] = static_cast<unsigned char>(u & 0xff);
  out[1] = static_cast<unsigned char>((u >> 8) & 0xff);
  out[2] = static_cast<unsigned char>((u >> 16) & 0xff);
  out[3] = static_cast<unsigned char>((u >> 24) & 0xff);
}

inline float decode_f32le(const unsigned char in[4]) {
  const std::uint32_t u = static_cast<std::uint32_t>(in[0]) |
                          (static_cast<std::uint32_t>(in[1]) << 8) |
                          (static_cast<std::uint32_t>(in[2]) << 16) |
                          (static_cast<std::uint32_t>(in[3]) << 24);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

inline std::vector<unsigned char> to_bytes(const Tensor& t) {
  std::vector<unsigned char> bytes(static_cast<std::size_t>(t.numel()) * 4);
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    encode_f32le(static_cast<float>(t[i]), bytes.data() + i * 4);
  }
  return bytes;
}

inline void write_file(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(detail::str("cannot open for write: ", path.string()));
  const auto bytes = to_bytes(t);
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError(detail::str("short write: ", path.string()));
}

inline Tensor read_file(const std::filesystem::path& path, const Shape& shape) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(detail::str("cannot open for read: ", path.string()));
  is.seekg(0, std::ios::end);
  const std::int64_t actual = static_cast<std::int64_t>(is.tellg());
  is.seekg(0, std::ios::beg);
  const std::int64_t expected = shape_numel(shape) * 4;
  if (actual != expected) {
    throw FormatError(detail::str("file ", path.string(), ": expected ",
                                  expected, " bytes for shape ",
                                  shape_str(shape), ", found ", actual,
                                  " bytes"));
  }
  std::vector<unsigned char> bytes(static_cast<std::size_t>(actual));
  is.read(reinterpret_cast<char*>(bytes.data()), actual);
  if (!is) throw IoError(detail::str("short read: ", path.string()));
  Tensor t(shape);
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    t[i] = static_cast<double>(decode_f32le(bytes.data() + i * 4));
  }
  return t;
}

// Round-trips a tensor through float32 precision in memory. Checkpoints go
// through this before being reported, so save -> load is value-exact.
inline Tensor quantize(const Tensor& t) {
  Tensor out = t;
  for (auto& v : out.raw()) v = static_cast<double>(static_cast<float>(v));
  return out;
}

}  // namespace f32io

}  // namespace eegdwt
