#pragma once

#include <fstream>
#include <string>

#include <Eigen/Dense>

#include "error.hpp"
#include "json.hpp"

namespace globediff {

// (condition, state) pairs stored column-wise: x.col(i) pairs with s.col(i).
struct Dataset {
  Eigen::MatrixXd x;
  Eigen::MatrixXd s;
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();

  std::size_t size() const { return static_cast<std::size_t>(x.cols()); }
  std::size_t cond_dim() const { return static_cast<std::size_t>(x.rows()); }
  std::size_t state_dim() const { return static_cast<std::size_t>(s.rows()); }
  bool empty() const { return x.cols() == 0; }
};

namespace detail {

inline nlohmann::ordered_json to_json_array(const Eigen::Ref<const Eigen::VectorXd>& v) {
  auto arr = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

inline Eigen::VectorXd from_json_array(const nlohmann::ordered_json& arr, const std::string& where) {
  if (!arr.is_array()) throw FormatError(where + ": expected an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_number()) throw FormatError(where + ": non-numeric entry");
    v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
  }
  return v;
}

}  // namespace detail

// JSON Lines: a metadata header object followed by one {"x":[...],"s":[...]}
// record per pair. The header always carries task, seed, d, d_x and n.
inline void write_dataset(const Dataset& data, std::ostream& out) {
  auto header = data.meta;
  header["d"] = data.state_dim();
  header["d_x"] = data.cond_dim();
  header["n"] = data.size();
  out << header.dump() << '\n';
  for (Eigen::Index i = 0; i < data.x.cols(); ++i) {
    nlohmann::ordered_json rec;
    rec["x"] = detail::to_json_array(data.x.col(i));
    rec["s"] = detail::to_json_array(data.s.col(i));
    out << rec.dump() << '\n';
  }
}

inline void write_dataset(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset to '" + path + "'");
  write_dataset(data, out);
  if (!out) throw std::runtime_error("error while writing '" + path + "'");
}

inline Dataset read_dataset(std::istream& in, const std::string& name = "dataset") {
  std::string line;
  if (!std::getline(in, line)) throw FormatError(name + ": missing header line");
  Dataset data;
  try {
    data.meta = nlohmann::ordered_json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(name + ":1: " + e.what());
  }
  for (const char* key : {"d", "d_x", "n"}) {
    if (!data.meta.contains(key) || !data.meta[key].is_number_unsigned()) {
      throw FormatError(name + ":1: header lacks '" + std::string(key) + "'");
    }
  }
  const auto d = data.meta["d"].get<Eigen::Index>();
  const auto dx = data.meta["d_x"].get<Eigen::Index>();
  const auto n = data.meta["n"].get<Eigen::Index>();
  data.x.resize(dx, n);
  data.s.resize(d, n);
  Eigen::Index i = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = name + ":" + std::to_string(line_no);
    if (i >= n) throw FormatError(where + ": more records than header n");
    nlohmann::ordered_json rec;
    try {
      rec = nlohmann::ordered_json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(where + ": " + e.what());
    }
    if (!rec.contains("x") || !rec.contains("s")) throw FormatError(where + ": record needs x and s");
    auto x = detail::from_json_array(rec["x"], where);
    auto s = detail::from_json_array(rec["s"], where);
    if (x.size() != dx || s.size() != d) throw FormatError(where + ": record dims disagree with header");
    data.x.col(i) = x;
    data.s.col(i) = s;
    ++i;
  }
  if (i != n) throw FormatError(name + ": header n=" + std::to_string(n) + " but found " + std::to_string(i));
  return data;
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset '" + path + "'");
  return read_dataset(in, path);
}

}  // namespace globediff
