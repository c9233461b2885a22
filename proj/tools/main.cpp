#include <CLI11.hpp>
#include <iostream>

#include "commands.hpp"
#include "robarch/checkpoint.hpp"
#include "robarch/tensor_io.hpp"
#include "robarch/train.hpp"

using namespace robarch::cli;

int main(int argc, char** argv) {
  CLI::App app{"robarch: architecture robustness toolkit"};
  app.fallthrough();
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config, "JSON run file");
  app.add_option("--seed", g.seed, "Seed override");
  app.add_option("--out", g.out, "Output parent directory")->capture_default_str();
  app.add_option("--points", g.points, "Evaluation points override");
  app.add_option("--preset", g.preset, "Built-in training recipe (ladder-short, plain-short, full-at)");

  TrainOptions to;
  auto* train = app.add_subcommand("train", "Train a model (plain or FGSM adversarial training)");
  train->add_option("--epochs", to.epochs, "Epoch override");
  train->add_option("--init-from", to.init_from, "Checkpoint to initialize from");

  AttackOptions ao;
  auto* attack = app.add_subcommand("attack", "Attack a checkpoint under one threat model");
  attack->add_option("--checkpoint", ao.checkpoint, "Model checkpoint");
  attack->add_option("--threat", ao.threat, "linf | l2 | l1 | l0 | patch | frame");
  attack->add_option("--epsilon", ao.epsilon, "Budget (lp radius, pixel count or frame width)");
  attack->add_option("--token-size", ao.token_size, "Patch side (patch threat)");
  attack->add_option("--alignment", ao.alignment, "aligned | non_aligned | both (patch threat)");
  attack->add_option("--iterations", ao.iterations, "Attack iterations");
  attack->add_option("--restarts", ao.restarts, "Attack restarts");

  SweepOptionsCli so;
  auto* sweep = app.add_subcommand("sweep", "Evaluate models against a list of threats");
  sweep->add_option("--cache", so.cache, "Cell cache directory (default <out>/cells)");
  sweep->add_option("--format", so.format, "table | csv | records")->capture_default_str();

  VisualizeOptions vo;
  auto* vis = app.add_subcommand("visualize", "Render attention, norm, loss and perturbation maps");
  vis->add_option("--checkpoint", vo.checkpoint, "Model checkpoint")->required();
  vis->add_option("--kind", vo.kind, "attention | keynorm | querynorm | lossmap | perturbation")->required();
  vis->add_option("--image", vo.image, "PNG input");
  vis->add_option("--index", vo.index, "Test-split index of the configured dataset");
  vis->add_option("--label", vo.label, "True label of --image");
  vis->add_option("--patch", vo.patch, "Patch side for lossmap");
  vis->add_option("--iterations", vo.iterations, "Attack iterations")->capture_default_str();
  vis->add_option("--threat", vo.threat, "Threat for perturbation")->capture_default_str();

  LadderOptions lo;
  auto* ladder = app.add_subcommand("ladder", "List the ablation ladder and optionally train each row");
  ladder->add_option("--width", lo.width, "Stage-1 width")->capture_default_str();
  ladder->add_flag("--train", lo.train, "Train every row with the selected preset");

  GenDataOptions go;
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic shapes dataset");
  gen->add_option("--num-classes", go.num_classes, "Number of classes");
  gen->add_option("--samples-per-class", go.samples_per_class, "Samples per class");
  gen->add_option("--image-size", go.image_size, "Square image side");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*train) return cmd_train(g, to);
    if (*attack) return cmd_attack(g, ao);
    if (*sweep) return cmd_sweep(g, so);
    if (*vis) return cmd_visualize(g, vo);
    if (*ladder) return cmd_ladder(g, lo);
    if (*gen) return cmd_gen_data(g, go);
  } catch (const robarch::CatastrophicOverfitting& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOverfitting;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kValidation;
}
