#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vmark/archetypal.hpp"
#include "vmark/common.hpp"
#include "vmark/evaluation.hpp"
#include "vmark/heatmap.hpp"
#include "vmark/markers.hpp"
#include "vmark/reconstruction.hpp"

namespace vmark {

namespace detail {

template <class T>
void io_write(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T io_read(std::istream& is, const std::string& what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw format_error("truncated while reading " + what);
  return v;
}

// relative references inside a manifest resolve against the manifest's directory
inline std::string resolve_ref(const std::string& manifest_path, const std::string& ref) {
  const std::filesystem::path p(ref);
  if (p.is_absolute()) return ref;
  return (std::filesystem::path(manifest_path).parent_path() / p).string();
}

inline nlohmann::json parse_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot open for reading: " + path);
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw format_error(path + ": " + e.what());
  }
}

inline void write_json_file(const nlohmann::json& j, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open for writing: " + path);
  os << j.dump(2) << '\n';
  if (!os) throw io_error("write failed: " + path);
}

inline void require_version_1(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object() || !j.contains("version") || j.at("version") != 1)
    throw format_error(path + ": unsupported or missing version");
}

}  // namespace detail

// VMAT container: "VMAT" magic, u32 rows, u32 cols, float64 row-major payload.
// Doubles are stored verbatim, so round-trips are bit-exact.
inline void save_vmat(const Eigen::MatrixXd& m, const std::string& path) {
  if (m.rows() < 1 || m.cols() < 1) throw param_error("vmat: refusing to write an empty matrix");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("vmat: cannot open for writing: " + path);
  os.write("VMAT", 4);
  detail::io_write<std::uint32_t>(os, static_cast<std::uint32_t>(m.rows()));
  detail::io_write<std::uint32_t>(os, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) detail::io_write<double>(os, m(r, c));
  if (!os) throw io_error("vmat: write failed: " + path);
}

inline Eigen::MatrixXd load_vmat(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("vmat: cannot open for reading: " + path);
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "VMAT") throw format_error("vmat: bad magic in " + path);
  const auto rows = detail::io_read<std::uint32_t>(is, "vmat header of " + path);
  const auto cols = detail::io_read<std::uint32_t>(is, "vmat header of " + path);
  if (rows < 1 || cols < 1) throw format_error("vmat: empty dimensions in " + path);
  const std::uintmax_t expected = 12 + 8ull * rows * cols;
  std::error_code ec;
  const std::uintmax_t actual = std::filesystem::file_size(path, ec);
  if (ec || actual != expected) throw format_error("vmat: size mismatch in " + path);
  Eigen::MatrixXd m(rows, cols);
  for (std::uint32_t r = 0; r < rows; ++r)
    for (std::uint32_t c = 0; c < cols; ++c)
      m(r, c) = detail::io_read<double>(is, "vmat payload of " + path);
  return m;
}

// Marker-set manifest. The coefficient matrix lives in a sibling VMAT file;
// the "A_file" reference is stored as written and resolved against the
// manifest's directory when relative.
inline void save_marker_set(const MarkerSet& ms, const std::string& json_path,
                            const std::string& a_file = "") {
  if (ms.n_markers() < 1) throw param_error("marker set: empty");
  if (ms.A_sym.rows() != ms.n_markers() || ms.template_positions.rows() != ms.n_markers())
    throw param_error("marker set: inconsistent field shapes");
  const std::filesystem::path jp(json_path);
  const std::string a_ref = a_file.empty() ? jp.stem().string() + "_A.vmat" : a_file;
  save_vmat(ms.A_sym, detail::resolve_ref(json_path, a_ref));

  nlohmann::json j;
  j["version"] = 1;
  j["K"] = ms.n_markers();
  j["vertex_indices"] = ms.vertex_indices;
  j["midline"] = ms.midline_markers;
  j["A_file"] = a_ref;
  nlohmann::json tp = nlohmann::json::array();
  for (Eigen::Index k = 0; k < ms.template_positions.rows(); ++k)
    tp.push_back({ms.template_positions(k, 0), ms.template_positions(k, 1),
                  ms.template_positions(k, 2)});
  j["template_positions"] = tp;
  detail::write_json_file(j, json_path);
}

inline MarkerSet load_marker_set(const std::string& json_path) {
  const nlohmann::json j = detail::parse_json_file(json_path);
  detail::require_version_1(j, json_path);
  MarkerSet ms;
  try {
    const int K = j.at("K").get<int>();
    ms.vertex_indices = j.at("vertex_indices").get<std::vector<int>>();
    ms.midline_markers = j.at("midline").get<std::vector<int>>();
    const auto& tp = j.at("template_positions");
    if (K < 1 || static_cast<int>(ms.vertex_indices.size()) != K ||
        static_cast<int>(tp.size()) != K)
      throw format_error(json_path + ": K disagrees with field lengths");
    ms.template_positions.resize(K, 3);
    for (int k = 0; k < K; ++k)
      for (int c = 0; c < 3; ++c) ms.template_positions(k, c) = tp.at(k).at(c).get<double>();
    ms.A_sym = load_vmat(detail::resolve_ref(json_path, j.at("A_file").get<std::string>()));
  } catch (const nlohmann::json::exception& e) {
    throw format_error(json_path + ": " + e.what());
  }
  if (ms.A_sym.rows() != ms.n_markers())
    throw format_error(json_path + ": coefficient rows disagree with K");
  std::vector<int> sorted = ms.vertex_indices;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw format_error(json_path + ": duplicate vertex indices");
  for (const int v : ms.vertex_indices)
    if (v < 0 || v >= ms.A_sym.cols()) throw format_error(json_path + ": vertex index out of range");
  return ms;
}

// Archetype model manifest: A and B as VMAT files plus fit metadata.
inline void save_archetype_model(const ArchetypeModel& model, const std::string& json_path,
                                 std::uint64_t seed, double objective) {
  const std::filesystem::path jp(json_path);
  const std::string a_ref = jp.stem().string() + "_A.vmat";
  const std::string b_ref = jp.stem().string() + "_B.vmat";
  save_vmat(model.A, detail::resolve_ref(json_path, a_ref));
  save_vmat(model.B, detail::resolve_ref(json_path, b_ref));
  nlohmann::json j;
  j["version"] = 1;
  j["K"] = static_cast<int>(model.A.rows());
  j["seed"] = seed;
  j["objective"] = objective;
  j["A_file"] = a_ref;
  j["B_file"] = b_ref;
  detail::write_json_file(j, json_path);
}

inline ArchetypeModel load_archetype_model(const std::string& json_path) {
  const nlohmann::json j = detail::parse_json_file(json_path);
  detail::require_version_1(j, json_path);
  ArchetypeModel model;
  try {
    model.A = load_vmat(detail::resolve_ref(json_path, j.at("A_file").get<std::string>()));
    model.B = load_vmat(detail::resolve_ref(json_path, j.at("B_file").get<std::string>()));
    if (model.A.rows() != j.at("K").get<int>())
      throw format_error(json_path + ": K disagrees with coefficient rows");
  } catch (const nlohmann::json::exception& e) {
    throw format_error(json_path + ": " + e.what());
  }
  if (model.B.rows() != model.A.cols() || model.B.cols() != model.A.rows())
    throw format_error(json_path + ": A/B shape mismatch");
  return model;
}

// Estimates persist as a JSON array of {"P": [[x,y,z]...], "C": [...]}; a
// single object is accepted on read. Doubles survive the text round-trip
// exactly because the writer emits shortest round-trip representations.
inline void save_marker_estimates(const std::vector<MarkerEstimate>& estimates,
                                  const std::string& path) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : estimates) {
    e.validate();
    nlohmann::json je;
    nlohmann::json p = nlohmann::json::array();
    for (Eigen::Index k = 0; k < e.P.rows(); ++k)
      p.push_back({e.P(k, 0), e.P(k, 1), e.P(k, 2)});
    je["P"] = p;
    je["C"] = std::vector<double>(e.C.data(), e.C.data() + e.C.size());
    arr.push_back(je);
  }
  detail::write_json_file(arr, path);
}

inline std::vector<MarkerEstimate> load_marker_estimates(const std::string& path) {
  nlohmann::json j = detail::parse_json_file(path);
  if (j.is_object()) j = nlohmann::json::array({j});
  if (!j.is_array()) throw format_error(path + ": expected an estimate object or array");
  std::vector<MarkerEstimate> out;
  out.reserve(j.size());
  try {
    for (const auto& je : j) {
      MarkerEstimate e;
      const auto& p = je.at("P");
      const auto c = je.at("C").get<std::vector<double>>();
      if (p.empty()) throw format_error(path + ": estimate without markers");
      if (p.size() != c.size()) throw format_error(path + ": P/C length mismatch");
      e.P.resize(static_cast<Eigen::Index>(p.size()), 3);
      for (std::size_t k = 0; k < p.size(); ++k) {
        if (p.at(k).size() != 3) throw format_error(path + ": marker position is not a 3-vector");
        for (int cc = 0; cc < 3; ++cc)
          e.P(static_cast<Eigen::Index>(k), cc) = p.at(k).at(cc).get<double>();
      }
      e.C = Eigen::Map<const Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
      try {
        e.validate();
      } catch (const param_error& pe) {
        throw format_error(path + ": " + pe.what());
      }
      out.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw format_error(path + ": " + e.what());
  }
  return out;
}

// Adapter manifest: W and b as VMAT files (b stored as a one-column matrix)
// plus a reference to the marker-set manifest supplying the base coefficients.
inline void save_adapter(const CoefficientAdapter& adapter, const std::string& json_path,
                         const std::string& marker_set_ref) {
  adapter.validate();
  const std::filesystem::path jp(json_path);
  const std::string w_ref = jp.stem().string() + "_W.vmat";
  const std::string b_ref = jp.stem().string() + "_b.vmat";
  save_vmat(adapter.W, detail::resolve_ref(json_path, w_ref));
  save_vmat(adapter.b, detail::resolve_ref(json_path, b_ref));
  nlohmann::json j;
  j["version"] = 1;
  j["K"] = static_cast<int>(adapter.base.rows());
  j["M"] = static_cast<int>(adapter.base.cols());
  j["marker_set"] = marker_set_ref;
  j["W_file"] = w_ref;
  j["b_file"] = b_ref;
  detail::write_json_file(j, json_path);
}

inline CoefficientAdapter load_adapter(const std::string& json_path) {
  const nlohmann::json j = detail::parse_json_file(json_path);
  detail::require_version_1(j, json_path);
  CoefficientAdapter a;
  int K = 0, M = 0;
  try {
    K = j.at("K").get<int>();
    M = j.at("M").get<int>();
    const MarkerSet ms = load_marker_set(
        detail::resolve_ref(json_path, j.at("marker_set").get<std::string>()));
    a.base = ms.A_sym;
    a.W = load_vmat(detail::resolve_ref(json_path, j.at("W_file").get<std::string>()));
    const Eigen::MatrixXd bm =
        load_vmat(detail::resolve_ref(json_path, j.at("b_file").get<std::string>()));
    if (bm.cols() != 1) throw format_error(json_path + ": b is not a column vector");
    a.b = bm;
  } catch (const nlohmann::json::exception& e) {
    throw format_error(json_path + ": " + e.what());
  }
  if (a.base.rows() != K || a.base.cols() != M)
    throw format_error(json_path + ": marker set disagrees with manifest K/M");
  try {
    a.validate();
  } catch (const param_error& pe) {
    throw format_error(json_path + ": " + pe.what());
  }
  return a;
}

// Metric report: aggregate block plus one row per sample.
inline void save_metric_report(const MetricReport& r, const std::string& path) {
  nlohmann::json j;
  j["version"] = 1;
  j["aggregate"] = {{"mpve", r.mpve}, {"mpjpe", r.mpjpe}, {"pa_mpjpe", r.pa_mpjpe}};
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : r.per_sample)
    rows.push_back({{"mpve", s[0]}, {"mpjpe", s[1]}, {"pa_mpjpe", s[2]}});
  j["per_sample"] = rows;
  detail::write_json_file(j, path);
}

inline MetricReport load_metric_report(const std::string& path) {
  const nlohmann::json j = detail::parse_json_file(path);
  detail::require_version_1(j, path);
  MetricReport r;
  try {
    const auto& agg = j.at("aggregate");
    r.mpve = agg.at("mpve").get<double>();
    r.mpjpe = agg.at("mpjpe").get<double>();
    r.pa_mpjpe = agg.at("pa_mpjpe").get<double>();
    for (const auto& row : j.at("per_sample"))
      r.per_sample.push_back({row.at("mpve").get<double>(), row.at("mpjpe").get<double>(),
                              row.at("pa_mpjpe").get<double>()});
  } catch (const nlohmann::json::exception& e) {
    throw format_error(path + ": " + e.what());
  }
  return r;
}

// CSV with a header row, comma separators and '.' decimal marks. Cells are
// preformatted strings so callers control precision.
inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
  if (header.empty()) throw param_error("csv: empty header");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("csv: cannot open for writing: " + path);
  const auto emit = [&os](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) os << ',';
      os << cells[i];
    }
    os << '\n';
  };
  emit(header);
  for (const auto& row : rows) {
    if (row.size() != header.size()) throw param_error("csv: row width disagrees with header");
    emit(row);
  }
  if (!os) throw io_error("csv: write failed: " + path);
}

inline std::string csv_number(double v, int decimals = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

}  // namespace vmark
