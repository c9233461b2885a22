#include <doctest.h>

#include <filesystem>

#include "robarch/checkpoint.hpp"
#include "robarch/sweep.hpp"
#include "test_util.hpp"

using namespace robarch;
using robarch::testing::toy_config;
namespace fs = std::filesystem;

namespace {

RobustnessReport table_two() {
  RobustnessReport r;
  r.threats = desk_threats({3, 224, 224});
  r.threats[4].name = "patches";
  r.threats[5].name = "frames";
  r.points = 1000;
  const std::vector<std::pair<std::string, std::vector<double>>> rows = {
      {"ResNet-50", {68.9, 36.7, 19.2, 3.9, 6.6, 16.3, 24.3}},
      {"ResNet-50 modified", {69.9, 44.0, 34.3, 11.2, 14.5, 17.1, 20.8}},
      {"ConvNeXt-T", {70.7, 46.2, 30.6, 9.2, 16.4, 21.9, 18.7}}};
  for (const auto& [name, v] : rows) {
    ModelReport m;
    m.name = name;
    m.clean_accuracy = v[0];
    for (std::size_t t = 0; t < 6; ++t) {
      CellResult c;
      c.threat = r.threats[t].name;
      c.robust_accuracy = v[t + 1];
      m.cells.push_back(c);
    }
    r.models.push_back(m);
  }
  return r;
}

Dataset tiny_eval(std::size_t n) {
  DatasetSpec s;
  s.height = s.width = 16;
  s.samples_per_class = 30;
  const Splits sp = load_splits(s);
  return sp.test.head(n);
}

std::vector<ThreatSpec> cheap_threats() {
  const InputSize in{3, 16, 16};
  std::vector<ThreatSpec> t{desk_threat(ThreatKind::frame, in), desk_threat(ThreatKind::patch, in),
                            desk_threat(ThreatKind::l2, in), desk_threat(ThreatKind::linf, in)};
  for (auto& s : t) {
    s.budget.iterations = 5;
    s.budget.restarts = 1;
    s.budget.phase1_iterations = 2;
    s.budget.phase2_iterations = 3;
  }
  return t;
}

}  // namespace

TEST_SUITE("sweep") {
  TEST_CASE("the report reproduces the ConvNeXt-T row of the robustness table") {
    const std::string table = format_report(table_two(), ReportFormat::table);
    const std::string row = "70.7 | 46.2 | 30.6 | 9.2 | 16.4 | 21.9 | 18.7";
    CHECK(table.find("ConvNeXt-T         | " + row + "\n") != std::string::npos);
    const std::vector<double> v{70.7, 46.2, 30.6, 9.2, 16.4, 21.9, 18.7};
    CHECK(format_values(v) == row);
    CHECK(table.find("model              | clean | linf | l2 | l1 | l0 | patches | frames\n") != std::string::npos);
    CHECK(table.find("worst") == std::string::npos);
    const std::string csv = format_report(table_two(), ReportFormat::csv);
    CHECK(csv.find("ConvNeXt-T,70.7,46.2,30.6,9.2,16.4,21.9,18.7,\n") != std::string::npos);
    const auto recs = nlohmann::json::parse(format_report(table_two(), ReportFormat::records));
    CHECK(recs.size() == 18);
    CHECK(report_format_from_name("csv") == ReportFormat::csv);
    CHECK_THROWS_AS(report_format_from_name("xlsx"), ConfigError);
  }

  TEST_CASE("desk budgets scale from the reference geometry") {
    const auto big = desk_threats({3, 224, 224});
    CHECK(big[0].threat.epsilon == doctest::Approx(4.0 / 255));
    CHECK(big[0].seen);
    CHECK(big[1].threat.epsilon == doctest::Approx(2.0));
    CHECK(big[2].threat.epsilon == doctest::Approx(75.0));
    CHECK(big[3].threat.epsilon == 100.0);
    CHECK(big[4].threat.epsilon == 16.0);
    CHECK(big[5].threat.epsilon == 2.0);
    const auto small = desk_threats({3, 32, 32});
    CHECK(small[1].threat.epsilon == doctest::Approx(2.0 * std::sqrt(3072.0 / 150528.0)));
    CHECK(small[2].threat.epsilon == doctest::Approx(75.0 * 3072.0 / 150528.0));
    CHECK(small[3].threat.epsilon == 2.0);
    CHECK(small[4].threat.epsilon == 2.0);
    for (std::size_t i = 1; i < small.size(); ++i) CHECK_FALSE(small[i].seen);
  }

  TEST_CASE("threat order is seen first, then unseen by kind") {
    auto t = desk_threats({3, 32, 32});
    std::reverse(t.begin(), t.end());
    const auto o = ordered_threats(t);
    std::vector<std::string> names;
    for (const auto& s : o) names.push_back(s.name);
    CHECK(names == std::vector<std::string>{"linf", "l2", "l1", "l0", "patch", "frame"});
  }

  TEST_CASE("threat specs parse with field-named errors") {
    const InputSize in{3, 32, 32};
    CHECK_THROWS_WITH_AS(threat_spec_from_json({{"kind", "patch"}}, in), doctest::Contains("grid"), ConfigError);
    CHECK_THROWS_WITH_AS(threat_spec_from_json({{"kind", "l5"}}, in), doctest::Contains("frame"), ConfigError);
    CHECK_THROWS_AS(threat_spec_from_json({{"kind", "linf"}, {"eps", 0.1}}, in), ConfigError);
    const ThreatSpec p = threat_spec_from_json(
        {{"kind", "patch"}, {"grid", {{"token_size", 4}, {"alignment", "aligned"}}}}, in);
    CHECK(p.threat.epsilon == 4.0);
    CHECK(p.budget.alignment == PatchAlignmentMode::aligned);
    const ThreatSpec back = threat_spec_from_json(to_json(p), in);
    CHECK(to_json(back) == to_json(p));
    const ThreatSpec l = threat_spec_from_json({{"kind", "l2"}, {"epsilon", 0.5}, {"name", "l2-big"}}, in);
    CHECK(l.threat.epsilon == 0.5);
    CHECK(l.name == "l2-big");
    CHECK(second_lp_loss(3) == LossKind::margin);
    CHECK(second_lp_loss(10) == LossKind::dlr);
  }

  TEST_CASE("robust and worst-case accuracy") {
    const std::vector<bool> clean{true, true, true, false, true};
    const std::vector<bool> a{false, true, false, true, false};
    const std::vector<bool> b{false, false, true, true, false};
    CHECK(robust_accuracy(clean, a) == doctest::Approx(60.0));
    CHECK(worst_case(clean, {&a, &b}) == doctest::Approx(40.0));
    CHECK(worst_case(clean, {&a, &b}) <= std::min(robust_accuracy(clean, a), robust_accuracy(clean, b)));
    CHECK_THROWS_AS(robust_accuracy({}, {}), ConfigError);
    CHECK_THROWS_AS(worst_case(clean, {}), ConfigError);
  }

  TEST_CASE("sweeps are cached, ordered and consistent") {
    const Dataset eval = tiny_eval(12);
    Model m1 = build_model(toy_config("mlp"), 1);
    Model m2 = build_model(toy_config("resnet_ladder"), 2);
    const NamedModel models[] = {{"mlp", &m1, ""}, {"ladder", &m2, ""}};
    const fs::path cache = fs::temp_directory_path() / "robarch_sweep_cache";
    fs::remove_all(cache);
    SweepOptions opt{cheap_threats(), {"linf", "patch", "frame"}, 3, cache};
    const RobustnessReport a = run_sweep(models, eval, opt);
    REQUIRE(a.models.size() == 2);
    CHECK(a.threats[0].name == "linf");
    for (const auto& m : a.models) {
      REQUIRE(m.worst_case.has_value());
      double lowest = 100.0;
      for (const auto& c : m.cells) {
        CHECK(c.robust_accuracy <= m.clean_accuracy);
        CHECK_FALSE(c.cached);
        CHECK(fs::exists(fs::path(c.artifact) / "records.json"));
        for (std::size_t i = 0; i < eval.size(); ++i) {
          if (!m.clean_correct[i]) CHECK(c.success[i]);
        }
        if (c.threat != "l2") lowest = std::min(lowest, c.robust_accuracy);
      }
      CHECK(*m.worst_case <= lowest);
    }
    const RobustnessReport b = run_sweep(models, eval, opt);
    for (std::size_t k = 0; k < 2; ++k) {
      for (std::size_t t = 0; t < b.models[k].cells.size(); ++t) {
        CHECK(b.models[k].cells[t].cached);
        CHECK(b.models[k].cells[t].success == a.models[k].cells[t].success);
      }
    }
    CHECK(format_report(a, ReportFormat::table) == format_report(b, ReportFormat::table));
    CHECK(format_report(a, ReportFormat::table).find("worst-case") != std::string::npos);
    SweepOptions bad = opt;
    bad.worst_case_subset = {"l7"};
    CHECK_THROWS_AS(run_sweep(models, eval, bad), ConfigError);
    fs::remove_all(cache);
  }

  TEST_CASE("a model that fails to load gets an error row") {
    const fs::path dir = fs::temp_directory_path() / "robarch_sweep_cfg";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const Model m = build_model(toy_config("mlp"), 1);
    save_checkpoint(dir / "good.ckpt", m);
    SweepConfig c;
    c.dataset.height = c.dataset.width = 16;
    c.dataset.samples_per_class = 30;
    c.models = {{"good", dir / "good.ckpt"}, {"missing", dir / "missing.ckpt"}};
    c.threats = {cheap_threats()[3]};
    c.points = 6;
    const RobustnessReport r = run_sweep(c);
    REQUIRE(r.models.size() == 2);
    CHECK(r.models[0].error.empty());
    CHECK_FALSE(r.models[1].error.empty());
    CHECK(format_report(r, ReportFormat::table).find("missing | error:") != std::string::npos);
    CHECK(r.points == 6);
    fs::remove_all(dir);
  }
}
