#pragma once

#include <fstream>
#include <stdexcept>
#include <string>

#include "levelk/json_io.hpp"
#include "levelk/lstm.hpp"

namespace levelk {

inline constexpr int kCheckpointFormatVersion = 1;

inline json matrix_to_json(const MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline MatrixXd matrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols,
                                 const std::string& name) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows)
    throw std::runtime_error("checkpoint: tensor " + name + " has wrong row count");
  MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const json& row = j[r];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw std::runtime_error("checkpoint: tensor " + name + " has wrong column count");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[c].get<double>();
  }
  return m;
}

inline json vector_to_json(const VectorXd& v) {
  json arr = json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) arr.push_back(v(k));
  return arr;
}

inline VectorXd vector_from_json(const json& j, Eigen::Index size, const std::string& name) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != size)
    throw std::runtime_error("checkpoint: tensor " + name + " has wrong length");
  VectorXd v(size);
  for (Eigen::Index k = 0; k < size; ++k) v(k) = j[k].get<double>();
  return v;
}

inline json model_to_json(const SequenceModel& m) {
  json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["input_size"] = m.input_size;
  j["hidden_size"] = m.hidden_size;
  j["num_classes"] = m.num_classes;
  json tensors;
  for_each_tensor(const_cast<SequenceModel&>(m), [&](const char* name, const auto& t) {
    if constexpr (std::is_same_v<std::decay_t<decltype(t)>, VectorXd>)
      tensors[name] = vector_to_json(t);
    else
      tensors[name] = matrix_to_json(t);
  });
  j["tensors"] = std::move(tensors);
  return j;
}

inline SequenceModel model_from_json(const json& j) {
  if (!j.contains("format_version") || j.at("format_version").get<int>() != kCheckpointFormatVersion)
    throw std::runtime_error("checkpoint: unsupported format version");
  SequenceModel m = zeros_model(j.at("input_size").get<int>(), j.at("hidden_size").get<int>(),
                                j.at("num_classes").get<int>());
  const json& tensors = j.at("tensors");
  for_each_tensor(m, [&](const char* name, auto& t) {
    if (!tensors.contains(name)) throw std::runtime_error(std::string("checkpoint: missing tensor ") + name);
    if constexpr (std::is_same_v<std::decay_t<decltype(t)>, VectorXd>)
      t = vector_from_json(tensors.at(name), t.size(), name);
    else
      t = matrix_from_json(tensors.at(name), t.rows(), t.cols(), name);
  });
  return m;
}

inline void save_model(const std::string& path, const SequenceModel& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_model: cannot open " + path);
  out << model_to_json(m).dump(2) << "\n";
}

inline SequenceModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_model: cannot open " + path);
  return model_from_json(json::parse(in));
}

}  // namespace levelk
