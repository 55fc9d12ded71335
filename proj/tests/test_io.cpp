#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "test_paths.hpp"
#include "vmark/io.hpp"

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::path(g_scratch_dir) / "io";
  fs::create_directories(dir);
  return dir / name;
}

bool bitwise_equal(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

Eigen::MatrixXd awkward_matrix() {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  Eigen::MatrixXd m(5, 4);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = u(rng);
  m(0, 0) = 0.0;
  m(0, 1) = -0.0;
  m(1, 0) = 1e-308;                       // subnormal neighborhood
  m(1, 1) = 0.1;                          // not exactly representable
  m(2, 2) = 3.141592653589793;
  m(3, 3) = -2.2250738585072014e-308;
  return m;
}

vmark::MarkerSet tiny_marker_set() {
  vmark::MarkerSet ms;
  ms.vertex_indices = {4, 0, 2};
  ms.midline_markers = {0};
  ms.A_sym.resize(3, 5);
  ms.A_sym << 0.2, 0.3, 1.0, 0.25, 0.1,
              0.5, 0.6, 0.0, 0.25, 0.2,
              0.3, 0.1, 0.0, 0.50, 0.7;
  ms.template_positions.resize(3, 3);
  ms.template_positions << 10.5, -3.25, 7.0, 0.0, 2.0, -1.0, -10.5, -3.25, 7.0;
  return ms;
}

}  // namespace

TEST_CASE("vmat round-trips bit-exactly") {
  const auto m = awkward_matrix();
  const auto path = scratch("round.vmat").string();
  vmark::save_vmat(m, path);
  const auto back = vmark::load_vmat(path);
  CHECK(bitwise_equal(m, back));

  // a second save produces identical bytes
  const auto path2 = scratch("round2.vmat").string();
  vmark::save_vmat(m, path2);
  std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  const std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
  CHECK(sa.size() == 12 + 8 * 20);
}

TEST_CASE("vmat rejects malformed files") {
  CHECK_THROWS_AS(vmark::load_vmat(scratch("absent.vmat").string()), vmark::io_error);
  CHECK_THROWS_AS(vmark::save_vmat(Eigen::MatrixXd(), scratch("empty.vmat").string()),
                  vmark::param_error);

  const auto bad_magic = scratch("bad_magic.vmat").string();
  std::ofstream(bad_magic, std::ios::binary) << "VMXT1234567890";
  CHECK_THROWS_AS(vmark::load_vmat(bad_magic), vmark::format_error);

  const auto m = awkward_matrix();
  const auto truncated = scratch("trunc.vmat").string();
  vmark::save_vmat(m, truncated);
  fs::resize_file(truncated, 12 + 8 * 7);
  CHECK_THROWS_AS(vmark::load_vmat(truncated), vmark::format_error);

  const auto trailing = scratch("trailing.vmat").string();
  vmark::save_vmat(m, trailing);
  std::ofstream(trailing, std::ios::binary | std::ios::app) << "junk";
  CHECK_THROWS_AS(vmark::load_vmat(trailing), vmark::format_error);
}

TEST_CASE("marker set manifest round-trips all fields") {
  const auto ms = tiny_marker_set();
  const auto path = scratch("markers.json").string();
  vmark::save_marker_set(ms, path);
  const auto back = vmark::load_marker_set(path);
  CHECK(back.vertex_indices == ms.vertex_indices);
  CHECK(back.midline_markers == ms.midline_markers);
  CHECK(bitwise_equal(back.A_sym, ms.A_sym));
  CHECK(bitwise_equal(back.template_positions, ms.template_positions));

  // the coefficient matrix lives in a sibling VMAT named after the manifest
  CHECK(fs::exists(scratch("markers_A.vmat")));
}

TEST_CASE("marker set loader rejects inconsistent manifests") {
  const auto ms = tiny_marker_set();
  const auto path = scratch("bad_markers.json").string();
  vmark::save_marker_set(ms, path);

  const auto doctor = [&](auto mutate, const std::string& name) {
    nlohmann::json j;
    std::ifstream(path) >> j;
    mutate(j);
    const auto out = scratch(name).string();
    std::ofstream(out) << j.dump(2);
    return out;
  };

  CHECK_THROWS_AS(
      vmark::load_marker_set(doctor([](nlohmann::json& j) { j["version"] = 2; }, "v2.json")),
      vmark::format_error);
  CHECK_THROWS_AS(
      vmark::load_marker_set(doctor([](nlohmann::json& j) { j["K"] = 4; }, "k4.json")),
      vmark::format_error);
  CHECK_THROWS_AS(vmark::load_marker_set(doctor(
                      [](nlohmann::json& j) { j["vertex_indices"] = {4, 4, 2}; }, "dup.json")),
                  vmark::format_error);
  CHECK_THROWS_AS(vmark::load_marker_set(doctor(
                      [](nlohmann::json& j) { j["vertex_indices"] = {4, 0, 99}; }, "oob.json")),
                  vmark::format_error);
  CHECK_THROWS_AS(vmark::load_marker_set(doctor(
                      [](nlohmann::json& j) { j["A_file"] = "nowhere.vmat"; }, "noa.json")),
                  vmark::io_error);
  CHECK_THROWS_AS(vmark::load_marker_set(doctor(
                      [](nlohmann::json& j) { j.erase("midline"); }, "nomid.json")),
                  vmark::format_error);

  const auto not_json = scratch("not.json").string();
  std::ofstream(not_json) << "{ nope";
  CHECK_THROWS_AS(vmark::load_marker_set(not_json), vmark::format_error);
}

TEST_CASE("archetype model manifest round-trips") {
  vmark::ArchetypeModel model;
  model.A = awkward_matrix().topRows(3);                              // K=3, M=4
  model.B = awkward_matrix().transpose().topLeftCorner(4, 3).eval();  // M x K
  const auto path = scratch("model.json").string();
  vmark::save_archetype_model(model, path, 42, 1.25);
  const auto back = vmark::load_archetype_model(path);
  CHECK(bitwise_equal(back.A, model.A));
  CHECK(bitwise_equal(back.B, model.B));

  nlohmann::json j;
  std::ifstream(path) >> j;
  CHECK(j.at("K") == 3);
  CHECK(j.at("seed") == 42);
  CHECK(j.at("objective") == 1.25);
}

TEST_CASE("marker estimates round-trip through json exactly") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> pos(-900.0, 900.0);
  std::uniform_real_distribution<double> conf(0.0, 1.0);
  std::vector<vmark::MarkerEstimate> est(3);
  for (auto& e : est) {
    e.P.resize(4, 3);
    for (Eigen::Index k = 0; k < 4; ++k)
      for (int c = 0; c < 3; ++c) e.P(k, c) = pos(rng);
    e.C.resize(4);
    for (Eigen::Index k = 0; k < 4; ++k) e.C[k] = conf(rng);
  }
  const auto path = scratch("estimates.json").string();
  vmark::save_marker_estimates(est, path);
  const auto back = vmark::load_marker_estimates(path);
  REQUIRE(back.size() == est.size());
  for (std::size_t i = 0; i < est.size(); ++i) {
    CHECK(bitwise_equal(back[i].P, est[i].P));
    CHECK(bitwise_equal(back[i].C, est[i].C));
  }
}

TEST_CASE("marker estimate loader accepts a single object and rejects bad shapes") {
  const auto single = scratch("single.json").string();
  std::ofstream(single) << R"({"P": [[1.0, 2.0, 3.0]], "C": [0.5]})";
  const auto one = vmark::load_marker_estimates(single);
  REQUIRE(one.size() == 1);
  CHECK(one[0].P(0, 1) == 2.0);
  CHECK(one[0].C[0] == 0.5);

  const auto bad_vec = scratch("badvec.json").string();
  std::ofstream(bad_vec) << R"([{"P": [[1.0, 2.0]], "C": [0.5]}])";
  CHECK_THROWS_AS(vmark::load_marker_estimates(bad_vec), vmark::format_error);

  const auto len_mismatch = scratch("lenmis.json").string();
  std::ofstream(len_mismatch) << R"([{"P": [[1.0, 2.0, 3.0]], "C": [0.5, 0.5]}])";
  CHECK_THROWS_AS(vmark::load_marker_estimates(len_mismatch), vmark::format_error);

  const auto conf_range = scratch("confrange.json").string();
  std::ofstream(conf_range) << R"([{"P": [[1.0, 2.0, 3.0]], "C": [1.5]}])";
  CHECK_THROWS_AS(vmark::load_marker_estimates(conf_range), vmark::format_error);

  const auto missing_c = scratch("missingc.json").string();
  std::ofstream(missing_c) << R"([{"P": [[1.0, 2.0, 3.0]]}])";
  CHECK_THROWS_AS(vmark::load_marker_estimates(missing_c), vmark::format_error);
}

TEST_CASE("adapter manifest round-trips against its marker set") {
  const auto ms = tiny_marker_set();
  const auto ms_path = scratch("adapter_ms.json").string();
  vmark::save_marker_set(ms, ms_path);

  auto adapter = vmark::CoefficientAdapter::zero_initialized(ms.A_sym);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 0.01);
  for (Eigen::Index i = 0; i < adapter.W.size(); ++i) adapter.W.data()[i] = g(rng);
  for (Eigen::Index i = 0; i < adapter.b.size(); ++i) adapter.b[i] = g(rng);

  const auto path = scratch("adapter.json").string();
  vmark::save_adapter(adapter, path, "adapter_ms.json");
  const auto back = vmark::load_adapter(path);
  CHECK(bitwise_equal(back.base, adapter.base));
  CHECK(bitwise_equal(back.W, adapter.W));
  CHECK(bitwise_equal(back.b, adapter.b));

  // manifest K disagreeing with the referenced marker set is refused
  nlohmann::json j;
  std::ifstream(path) >> j;
  j["K"] = 7;
  const auto bad = scratch("adapter_badk.json").string();
  std::ofstream(bad) << j.dump(2);
  CHECK_THROWS_AS(vmark::load_adapter(bad), vmark::format_error);
}

TEST_CASE("metric report round-trips") {
  vmark::MetricReport r;
  r.mpve = 12.5;
  r.mpjpe = 30.25;
  r.pa_mpjpe = 8.125;
  r.per_sample = {{1.0, 2.0, 3.0}, {4.5, 5.5, 6.5}};
  const auto path = scratch("report.json").string();
  vmark::save_metric_report(r, path);
  const auto back = vmark::load_metric_report(path);
  CHECK(back.mpve == r.mpve);
  CHECK(back.mpjpe == r.mpjpe);
  CHECK(back.pa_mpjpe == r.pa_mpjpe);
  REQUIRE(back.per_sample.size() == 2);
  CHECK(back.per_sample[1] == r.per_sample[1]);
}

TEST_CASE("csv writer emits header plus rows with comma separators") {
  const auto path = scratch("table.csv").string();
  vmark::write_csv(path, {"K", "err"},
                   {{"8", vmark::csv_number(1.5)}, {"16", vmark::csv_number(0.25)}});
  std::ifstream is(path, std::ios::binary);
  const std::string got((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  CHECK(got == "K,err\n8,1.500000\n16,0.250000\n");

  CHECK_THROWS_AS(vmark::write_csv(path, {"a"}, {{"1", "2"}}), vmark::param_error);
  CHECK_THROWS_AS(vmark::write_csv(path, {}, {}), vmark::param_error);
}
