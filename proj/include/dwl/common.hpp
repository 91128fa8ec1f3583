#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dwl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Mix a distribution with the uniform one so every entry is bounded away
// from zero. Keeps the scaling ratios in Sinkhorn-type recursions finite.
inline Vec floor_smooth(const Vec& p, double eta = 1e-8) {
  const double n = static_cast<double>(p.size());
  return (1.0 - eta) * p + Vec::Constant(p.size(), eta / n);
}

inline bool is_distribution(const Vec& p, double tol = 1e-9) {
  if (p.size() == 0) return false;
  if ((p.array() < 0.0).any()) return false;
  return std::abs(p.sum() - 1.0) <= tol;
}

// FNV-1a over a byte range; used for input digests in run manifests and
// checkpoint integrity fields.
inline std::uint64_t fnv1a(const void* data, std::size_t len,
                           std::uint64_t seed = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string fnv1a_hex(const std::string& s) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(s.data(), s.size())));
  return std::string(buf);
}

namespace base64 {

inline const char* alphabet() {
  return "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

inline std::string encode(const void* data, std::size_t len) {
  const auto* in = static_cast<const unsigned char*>(data);
  const char* tab = alphabet();
  std::string out;
  out.reserve((len + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= len; i += 3) {
    std::uint32_t v = (in[i] << 16) | (in[i + 1] << 8) | in[i + 2];
    out.push_back(tab[(v >> 18) & 63]);
    out.push_back(tab[(v >> 12) & 63]);
    out.push_back(tab[(v >> 6) & 63]);
    out.push_back(tab[v & 63]);
  }
  if (i + 1 == len) {
    std::uint32_t v = in[i] << 16;
    out.push_back(tab[(v >> 18) & 63]);
    out.push_back(tab[(v >> 12) & 63]);
    out += "==";
  } else if (i + 2 == len) {
    std::uint32_t v = (in[i] << 16) | (in[i + 1] << 8);
    out.push_back(tab[(v >> 18) & 63]);
    out.push_back(tab[(v >> 12) & 63]);
    out.push_back(tab[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

inline std::vector<unsigned char> decode(const std::string& s) {
  int rev[256];
  for (int i = 0; i < 256; ++i) rev[i] = -1;
  const char* tab = alphabet();
  for (int i = 0; i < 64; ++i) rev[static_cast<unsigned char>(tab[i])] = i;
  std::vector<unsigned char> out;
  out.reserve(s.size() / 4 * 3);
  std::uint32_t v = 0;
  int bits = 0;
  for (char c : s) {
    if (c == '=' || c == '\n' || c == '\r') continue;
    int d = rev[static_cast<unsigned char>(c)];
    if (d < 0) throw DataError("base64: invalid character");
    v = (v << 6) | static_cast<std::uint32_t>(d);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<unsigned char>((v >> bits) & 0xff));
    }
  }
  return out;
}

}  // namespace base64

// Matrices cross the checkpoint boundary as base64-encoded little-endian
// float64, row-major.
inline std::string encode_matrix(const Mat& m) {
  std::vector<double> row_major(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      row_major[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
  return base64::encode(row_major.data(), row_major.size() * sizeof(double));
}

inline Mat decode_matrix(const std::string& b64, Eigen::Index rows,
                         Eigen::Index cols) {
  std::vector<unsigned char> bytes = base64::decode(b64);
  if (bytes.size() != static_cast<std::size_t>(rows * cols) * sizeof(double))
    throw DataError("matrix payload size does not match declared shape");
  Mat m(rows, cols);
  const double* p = reinterpret_cast<const double*>(bytes.data());
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = p[i * cols + j];
  return m;
}

}  // namespace dwl
