#include <fstream>

#include "robarch/outcome_io.hpp"
#include "robarch/tensor_io.hpp"

namespace robarch {

nlohmann::json outcome_records(const AttackOutcome& outcome, const Tensor& original, std::span<const int> labels,
                               const std::vector<bool>& clean_correct, const ThreatModel& threat, const Tensor* mask) {
  const std::size_t n = labels.size();
  if (outcome.size() != n || clean_correct.size() != n) throw ShapeError("outcome_records: size mismatch");
  const auto residual = constraint_residual(original, outcome.adversarial, threat, mask);
  nlohmann::json recs = nlohmann::json::array();
  std::size_t correct = 0, robust = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool ok = clean_correct[i];
    const bool is_robust = ok && !outcome.success[i];
    correct += ok;
    robust += is_robust;
    recs.push_back({{"index", i},
                    {"label", labels[i]},
                    {"clean_correct", ok},
                    {"success", !is_robust},
                    {"best_loss", outcome.best_loss[i]},
                    {"constraint_residual", residual[i]},
                    {"queries", outcome.queries[i]},
                    {"iterations", outcome.iterations[i]}});
  }
  const double denom = n ? static_cast<double>(n) : 1.0;
  return {{"threat", {{"kind", threat_name(threat.kind)}, {"epsilon", threat.epsilon}}},
          {"records", recs},
          {"summary",
           {{"n", n},
            {"clean_accuracy", 100.0 * static_cast<double>(correct) / denom},
            {"robust_accuracy", 100.0 * static_cast<double>(robust) / denom}}}};
}

double robust_accuracy_from_records(const nlohmann::json& records) {
  const auto& recs = records.at("records");
  if (recs.empty()) throw ConfigError("robust_accuracy: no records");
  std::size_t robust = 0;
  for (const auto& r : recs) robust += r.at("clean_correct").get<bool>() && !r.at("success").get<bool>();
  return 100.0 * static_cast<double>(robust) / static_cast<double>(recs.size());
}

void save_outcome(const std::filesystem::path& dir, const AttackOutcome& outcome, const nlohmann::json& records) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "records.json");
    if (!out) throw IoError((dir / "records.json").string() + ": cannot open for writing");
    out << records.dump(2) << "\n";
  }
  Archive a;
  a.meta["kind"] = "adversarial_batch";
  a.add("adversarial", outcome.adversarial);
  write_archive(dir / "adversarial.rbt", a);
}

Tensor load_adversarial(const std::filesystem::path& dir) {
  return read_archive(dir / "adversarial.rbt").get("adversarial");
}

}  // namespace robarch
