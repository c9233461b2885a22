#include <algorithm>
#include <cmath>
#include <cstdio>

#include "robarch/attacks.hpp"
#include "robarch/checkpoint.hpp"
#include "robarch/random.hpp"
#include "robarch/train.hpp"

namespace robarch {

nlohmann::json to_json(const TrainHistory& h) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& r : h) {
    a.push_back({{"epoch", r.epoch},
                 {"learning_rate", r.learning_rate},
                 {"train_loss", r.train_loss},
                 {"train_accuracy", r.train_accuracy},
                 {"holdout_clean", r.holdout_clean},
                 {"holdout_fgsm", r.holdout_fgsm},
                 {"holdout_pgd2", r.holdout_pgd2},
                 {"checkpoint", r.checkpoint}});
  }
  return a;
}

TrainHistory history_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ConfigError("history: expected an array of epoch records");
  TrainHistory h;
  for (const auto& r : j) {
    EpochRecord e;
    e.epoch = r.at("epoch").get<std::size_t>();
    e.learning_rate = r.value("learning_rate", 0.0);
    e.train_loss = r.value("train_loss", 0.0);
    e.train_accuracy = r.value("train_accuracy", 0.0);
    e.holdout_clean = r.at("holdout_clean").get<double>();
    e.holdout_fgsm = r.at("holdout_fgsm").get<double>();
    e.holdout_pgd2 = r.at("holdout_pgd2").get<double>();
    e.checkpoint = r.value("checkpoint", std::string());
    h.push_back(e);
  }
  return h;
}

Tensor inner_maximization(const Model& model, const Tensor& batch, std::span<const int> labels, std::size_t steps,
                          double epsilon, bool random_init, std::uint64_t seed, nn::Mode mode) {
  if (steps == 0) throw ConfigError("inner_maximization: steps must be >= 1");
  FgsmOptions opt;
  opt.random_init = random_init;
  opt.steps = steps;
  opt.seed = seed;
  opt.mode = mode;
  return fgsm_batch(model, batch, labels, epsilon, opt);
}

OverfittingSignal detect_catastrophic_overfitting(const TrainHistory& h, std::size_t window, double min_drop) {
  if (window == 0) throw ConfigError("detect_catastrophic_overfitting: window must be positive");
  for (std::size_t e = 0; e < h.size(); ++e) {
    const std::size_t first = e + 1 >= window ? e + 1 - window : 0;
    double max_fgsm = 0.0, max_pgd = 0.0;
    for (std::size_t k = first; k <= e; ++k) {
      max_fgsm = std::max(max_fgsm, h[k].holdout_fgsm);
      max_pgd = std::max(max_pgd, h[k].holdout_pgd2);
    }
    const double pgd = h[e].holdout_pgd2;
    const bool fgsm_stable = h[e].holdout_fgsm >= max_fgsm - 10.0;
    const bool pgd_collapsed = pgd < 0.5 * max_pgd && max_pgd - pgd > min_drop;
    if (fgsm_stable && pgd_collapsed) return {true, h[e].epoch ? h[e].epoch : e + 1};
  }
  return {};
}

namespace {

double robust_percent(const std::vector<bool>& clean_ok, const std::vector<bool>& fooled) {
  std::size_t r = 0;
  for (std::size_t i = 0; i < clean_ok.size(); ++i) r += clean_ok[i] && !fooled[i];
  return 100.0 * static_cast<double>(r) / static_cast<double>(clean_ok.size());
}

}  // namespace

HoldoutScores evaluate_holdout(const Model& model, const Dataset& holdout, double epsilon) {
  if (holdout.size() == 0) throw ConfigError("holdout: empty dataset");
  const auto wrong = misclassified(predict_logits(model, holdout.images), holdout.labels);
  std::vector<bool> ok(wrong.size());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < wrong.size(); ++i) {
    ok[i] = !wrong[i];
    correct += ok[i];
  }
  HoldoutScores s;
  s.clean = 100.0 * static_cast<double>(correct) / static_cast<double>(ok.size());
  s.fgsm = robust_percent(ok, fgsm(model, holdout.images, holdout.labels, epsilon, false, 1).success);
  s.pgd2 = robust_percent(ok, fgsm(model, holdout.images, holdout.labels, epsilon, false, 2).success);
  return s;
}

std::size_t select_by_score(std::span<const double> scores) {
  if (scores.empty()) throw ConfigError("select_checkpoint: no checkpoints");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] >= scores[best]) best = i;
  }
  return best;
}

std::size_t select_checkpoint(std::span<const Model> checkpoints, const Dataset& holdout, double epsilon) {
  if (checkpoints.empty()) throw ConfigError("select_checkpoint: no checkpoints");
  if (holdout.size() == 0) throw ConfigError("select_checkpoint: empty holdout");
  std::vector<double> scores;
  for (const auto& m : checkpoints) scores.push_back(evaluate_holdout(m, holdout, epsilon).fgsm);
  return select_by_score(scores);
}

TrainResult adversarial_train(const ModelConfig& model_config, const Splits& data, const TrainConfig& config,
                              const std::filesystem::path& out_dir, const EpochCallback& on_epoch,
                              std::uint64_t model_seed) {
  validate(config);
  validate(model_config);
  const Dataset& train = data.train;
  if (train.size() == 0) throw ConfigError("train: empty training split");
  if (data.holdout.size() == 0) throw ConfigError("train: empty holdout split");
  if (train.num_classes != model_config.num_classes) {
    throw ConfigError("train: dataset has " + std::to_string(train.num_classes) + " classes, model expects " +
                      std::to_string(model_config.num_classes));
  }

  TrainResult res{build_model(model_config, model_seed), {}, {}, {}, 0};
  Model& model = res.model;
  if (config.init_from) model.load_state(load_checkpoint(*config.init_from, model_config).state());
  model.check_input(train.images.slice(0, 1));
  model.set_mode(nn::Mode::eval);

  const Dataset holdout = config.holdout_points == 0
                              ? data.holdout
                              : data.holdout.subset(evaluation_indices(data.holdout.size(), config.holdout_points,
                                                                       mix_seed(config.seed, 0x401d)));
  const double eval_eps = config.at_epsilon > 0.0 ? config.at_epsilon : 4.0 / 255.0;
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);

  AdamW opt(model.parameters());
  const std::size_t n = train.size(), bs = config.batch_size;
  const std::size_t steps = (n + bs - 1) / bs;
  std::vector<std::size_t> order(n);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng = make_rng(config.seed, 0xe90c + epoch);
    for (std::size_t j = n; j > 1; --j) std::swap(order[j - 1], order[uniform_index(rng, j)]);

    double loss_sum = 0.0, lr = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < steps; ++b) {
      const std::size_t begin = b * bs, end = std::min(n, begin + bs);
      const std::vector<std::size_t> idx(order.begin() + static_cast<long>(begin), order.begin() + static_cast<long>(end));
      const std::uint64_t step_seed = mix_seed(config.seed, epoch * steps + b);
      Tensor xb = train.images.gather(idx);
      std::vector<int> yb;
      for (std::size_t i : idx) yb.push_back(train.labels[i]);
      if (config.augment) xb = augment_batch(xb, config.crop_padding, step_seed);
      if (config.at_inner_steps > 0) {
        xb = inner_maximization(model, xb, yb, config.at_inner_steps, config.at_epsilon, config.at_random_init,
                                step_seed);
      }
      nn::ParamGrads grads = model.make_grads();
      nn::Node node;
      nn::PassState st{nn::Mode::train, true, &grads, nullptr};
      const Tensor logits = model.forward(xb, node, st);
      LossResult loss = loss_with_grad(logits, yb, LossKind::cross_entropy);
      double batch_loss = 0.0;
      for (double v : loss.values) batch_loss += v;
      if (!std::isfinite(batch_loss)) {
        throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " +
                              std::to_string(b + 1) + "; lower peak_lr or check the inputs");
      }
      const auto wrong = misclassified(logits, yb);
      for (bool w : wrong) correct += !w;
      loss_sum += batch_loss;
      loss.grad *= 1.0 / static_cast<double>(idx.size());
      model.backward(loss.grad, node, st);
      lr = learning_rate(config, static_cast<double>(epoch) + static_cast<double>(b) / static_cast<double>(steps));
      opt.step(grads, lr, config.weight_decay);
    }

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.learning_rate = lr;
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.train_accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(n);
    const HoldoutScores s = evaluate_holdout(model, holdout, eval_eps);
    rec.holdout_clean = s.clean;
    rec.holdout_fgsm = s.fgsm;
    rec.holdout_pgd2 = s.pgd2;
    if (!out_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03zu.ckpt", epoch + 1);
      const auto path = out_dir / name;
      save_checkpoint(path, model, {{"epoch", epoch + 1}});
      rec.checkpoint = path.string();
      res.checkpoints.push_back(path);
    }
    res.states.push_back(model.state());
    res.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (config.at_inner_steps > 0 && config.abort_on_overfitting) {
      const auto sig = detect_catastrophic_overfitting(res.history, config.overfitting_window);
      if (sig.triggered) {
        throw CatastrophicOverfitting("train: catastrophic overfitting detected at epoch " +
                                          std::to_string(sig.epoch) +
                                          " (PGD-2 holdout accuracy collapsed while FGSM stayed high); "
                                          "consider raising at_inner_steps",
                                      sig.epoch, res.history);
      }
    }
  }

  if (config.at_inner_steps > 0) {
    std::vector<double> scores;
    for (const auto& r : res.history) scores.push_back(r.holdout_fgsm);
    res.selected = select_by_score(scores);
  } else {
    res.selected = res.history.size() - 1;
  }
  return res;
}

}  // namespace robarch
