#pragma once
// JSON (de)serialization for operators and states. The on-disk format for a
// square complex matrix is {"dim": d, "data": [re, im, re, im, ...]} with the
// entries in row-major order; vectors use the same layout with "dim" = length.

#include <string>

#include "json.hpp"
#include "qcertlab/qcore.hpp"

namespace qcertlab {

using json = nlohmann::json;

inline json mat_to_json(const Mat& m) {
  require_square(m, "mat_to_json");
  json data = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      data.push_back(m(i, j).real());
      data.push_back(m(i, j).imag());
    }
  }
  return json{{"dim", m.rows()}, {"data", std::move(data)}};
}

inline Mat mat_from_json(const json& j) {
  if (!j.contains("dim") || !j.contains("data")) {
    throw ConfigError("matrix JSON must contain 'dim' and 'data'");
  }
  const auto d = j.at("dim").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (d < 1 || !data.is_array() ||
      data.size() != static_cast<std::size_t>(2 * d * d)) {
    throw ConfigError("matrix JSON: 'data' must hold 2*dim^2 numbers");
  }
  Mat m(d, d);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index jj = 0; jj < d; ++jj) {
      const double re = data.at(k++).get<double>();
      const double im = data.at(k++).get<double>();
      m(i, jj) = cx(re, im);
    }
  }
  return m;
}

inline json vec_to_json(const Vec& v) {
  json data = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    data.push_back(v(i).real());
    data.push_back(v(i).imag());
  }
  return json{{"dim", v.size()}, {"data", std::move(data)}};
}

inline Vec vec_from_json(const json& j) {
  if (!j.contains("dim") || !j.contains("data")) {
    throw ConfigError("vector JSON must contain 'dim' and 'data'");
  }
  const auto d = j.at("dim").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (d < 1 || !data.is_array() ||
      data.size() != static_cast<std::size_t>(2 * d)) {
    throw ConfigError("vector JSON: 'data' must hold 2*dim numbers");
  }
  Vec v(d);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < d; ++i) {
    const double re = data.at(k++).get<double>();
    const double im = data.at(k++).get<double>();
    v(i) = cx(re, im);
  }
  return v;
}

}  // namespace qcertlab
