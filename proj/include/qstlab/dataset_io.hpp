#pragma once

// JSON dataset files:
// { "method": "M1"|"M2", "n_qubits": int, "bases": ["XYZ", ...], "shots": int|null,
//   "values": [...], "distributions": [[...]], "counts": [[...]], "selection_meta": {...} }

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "qstlab/file_util.hpp"
#include "qstlab/measurement.hpp"

namespace qstlab {

inline nlohmann::json selection_meta_to_json(const SelectionMeta& m) {
  nlohmann::json j;
  j["strategy"] = m.strategy;
  j["seed"] = m.seed ? nlohmann::json(*m.seed) : nlohmann::json(nullptr);
  j["epsilon"] = m.epsilon ? nlohmann::json(*m.epsilon) : nlohmann::json(nullptr);
  j["note"] = m.note;
  return j;
}

inline SelectionMeta selection_meta_from_json(const nlohmann::json& j) {
  SelectionMeta m;
  m.strategy = j.at("strategy").get<std::string>();
  if (!j.at("seed").is_null()) m.seed = j.at("seed").get<std::uint64_t>();
  if (!j.at("epsilon").is_null()) m.epsilon = j.at("epsilon").get<double>();
  m.note = j.value("note", "");
  return m;
}

inline nlohmann::json dataset_to_json(const MeasurementDataset& ds) {
  nlohmann::json j;
  j["method"] = to_string(ds.method);
  j["n_qubits"] = ds.n_qubits();
  j["bases"] = ds.bases.labels();
  j["shots"] = ds.shots ? nlohmann::json(*ds.shots) : nlohmann::json(nullptr);
  j["values"] = ds.values;
  j["distributions"] = ds.distributions;
  j["counts"] = ds.counts;
  j["selection_meta"] = selection_meta_to_json(ds.bases.meta());
  return j;
}

namespace detail {

inline std::size_t line_of_offset(const std::string& text, std::size_t offset) {
  std::size_t line = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
    if (text[i] == '\n') ++line;
  }
  return line;
}

template <typename T>
T dataset_field(const nlohmann::json& j, const char* field) {
  if (!j.contains(field)) throw ParseError(std::string("dataset: missing field \"") + field + "\"");
  try {
    return j.at(field).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("dataset: field \"") + field + "\" has the wrong type: " + e.what());
  }
}

}  // namespace detail

inline MeasurementDataset dataset_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("dataset: top-level value must be an object");
  MeasurementDataset ds;
  ds.method = method_from_string(detail::dataset_field<std::string>(j, "method"));
  const int n = detail::dataset_field<int>(j, "n_qubits");
  const auto labels = detail::dataset_field<std::vector<std::string>>(j, "bases");
  SelectionMeta meta;
  try {
    meta = selection_meta_from_json(j.at("selection_meta"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("dataset: field \"selection_meta\" malformed: ") + e.what());
  }
  ds.bases = BasisSet::parse(n, labels, meta);
  if (!j.contains("shots")) throw ParseError("dataset: missing field \"shots\"");
  if (!j.at("shots").is_null()) ds.shots = detail::dataset_field<std::int64_t>(j, "shots");
  ds.values = detail::dataset_field<std::vector<double>>(j, "values");
  ds.distributions = detail::dataset_field<std::vector<std::vector<double>>>(j, "distributions");
  ds.counts = detail::dataset_field<std::vector<std::vector<std::int64_t>>>(j, "counts");

  const std::size_t m = ds.bases.size();
  const std::size_t outcomes = dimension_for(n);
  if (ds.method == Method::M1 && ds.values.size() != m) {
    throw ParseError("dataset: field \"values\" has " + std::to_string(ds.values.size()) +
                     " entries, expected " + std::to_string(m));
  }
  if (ds.method == Method::M2) {
    if (ds.distributions.size() != m) {
      throw ParseError("dataset: field \"distributions\" has " + std::to_string(ds.distributions.size()) +
                       " rows, expected " + std::to_string(m));
    }
    for (std::size_t r = 0; r < m; ++r) {
      if (ds.distributions[r].size() != outcomes) {
        throw ParseError("dataset: field \"distributions\" row " + std::to_string(r) + " has " +
                         std::to_string(ds.distributions[r].size()) + " entries");
      }
    }
  }
  if (ds.shots) {
    if (ds.counts.size() != m) throw ParseError("dataset: field \"counts\" must have one row per basis");
    for (std::size_t r = 0; r < m; ++r) {
      if (ds.counts[r].size() != outcomes) {
        throw ParseError("dataset: field \"counts\" row " + std::to_string(r) + " has wrong length");
      }
    }
  } else if (!ds.counts.empty()) {
    throw ParseError("dataset: field \"counts\" present without \"shots\"");
  }
  return ds;
}

inline void write_dataset(const std::filesystem::path& path, const MeasurementDataset& ds) {
  write_file_atomic(path, dataset_to_json(ds).dump(2) + "\n");
}

inline MeasurementDataset read_dataset(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ":" + std::to_string(detail::line_of_offset(text, e.byte)) +
                     ": " + e.what());
  }
  return dataset_from_json(j);
}

}  // namespace qstlab
