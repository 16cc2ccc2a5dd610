// aminet command-line tool.
//
//   aminet <command> [--config FILE] [--key value ...]
//
// Every setting can come from a flat key = value config file; flags of the
// same name override it. Exit codes: 0 success, 2 config error, 3 data error,
// 4 I/O error, 1 anything else.

#include <CLI11.hpp>

#include <functional>
#include <iostream>
#include <map>

#include "aminet/experiment.hpp"

namespace {

struct Options {
  aminet::ExperimentConfig config;
  std::string instance_pooling{aminet::name(config.model.instance_pooling)};
  std::string bag_pooling{aminet::name(config.model.bag_pooling)};
  std::string synth_rule{aminet::name(config.synthetic.rule)};
};

void add_options(CLI::App& app, Options& o) {
  auto& c = o.config;
  auto& m = c.model;
  auto& t = c.train;
  auto& s = c.synthetic;

  app.add_option("--seed", c.seed, "Master seed")->capture_default_str();
  app.add_option("--dataset", c.dataset, "JSONL dataset; synthetic data when empty");
  app.add_option("--out", c.out, "Output directory")->capture_default_str();
  app.add_option("--checkpoint", c.checkpoint, "Checkpoint for attention-export");

  app.add_option("--synth_bags", s.num_bags)->capture_default_str();
  app.add_option("--synth_vocab", s.vocab_size)->capture_default_str();
  app.add_option("--synth_keys", s.key_tokens, "Key token ids")->delimiter(',');
  app.add_option("--synth_min_size", s.min_bag_size)->capture_default_str();
  app.add_option("--synth_max_size", s.max_bag_size)->capture_default_str();
  app.add_option("--synth_positive_rate", s.positive_rate)->capture_default_str();
  app.add_option("--synth_rule", o.synth_rule, "any_key or co_occurrence")->capture_default_str();

  app.add_option("--d_model", m.d_model)->capture_default_str();
  app.add_option("--num_heads", m.num_heads)->capture_default_str();
  app.add_option("--hidden_sizes", m.hidden_sizes)->delimiter(',');
  app.add_option("--d_l", m.d_l)->capture_default_str();
  app.add_option("--instance_pooling", o.instance_pooling, "sum, max or mean")
      ->capture_default_str();
  app.add_option("--bag_pooling", o.bag_pooling, "attention, gated_attention, max or mean")
      ->capture_default_str();

  app.add_option("--learning_rate", t.learning_rate)->capture_default_str();
  app.add_option("--beta1", t.beta1)->capture_default_str();
  app.add_option("--beta2", t.beta2)->capture_default_str();
  app.add_option("--epsilon", t.epsilon)->capture_default_str();
  app.add_option("--max_epochs", t.max_epochs)->capture_default_str();
  app.add_option("--patience", t.patience)->capture_default_str();
  app.add_option("--batch_size", t.batch_size)->capture_default_str();
  app.add_option("--threshold", t.threshold)->capture_default_str();
  app.add_option("--folds", t.folds)->capture_default_str();
  app.add_option("--repetitions", t.repetitions)->capture_default_str();
  app.add_option("--validation_fraction", t.validation_fraction)->capture_default_str();
  app.add_option("--threads", t.threads, "Worker threads for CV folds; 0 = all cores")
      ->capture_default_str();
  app.add_flag("--log_timing", c.log_timing, "Add wall-clock seconds to the training log");

  app.add_option("--heads_grid", c.heads_grid)->delimiter(',');
  app.add_option("--instance_pooling_grid", c.instance_pooling_grid)->delimiter(',');
  app.add_option("--bag_pooling_grid", c.bag_pooling_grid)->delimiter(',');
  app.add_option("--feature_grid", c.feature_grid)->delimiter(',');
  app.add_option("--label_grid", c.label_grid)->delimiter(',');
  app.add_option("--deletion_grid", c.deletion_grid)->delimiter(',');
  app.add_option("--noise_kind", c.noise_kind, "feature or label")->capture_default_str();
}

aminet::ExperimentConfig finish(const Options& o) {
  aminet::ExperimentConfig c = o.config;
  c.model.instance_pooling = aminet::parse_instance_pooling(o.instance_pooling);
  c.model.bag_pooling = aminet::parse_bag_pooling(o.bag_pooling);
  c.synthetic.rule = aminet::parse_label_rule(o.synth_rule);
  return c;
}

void print_written(const std::filesystem::path& path) {
  std::cout << "wrote " << path.string() << "\n";
}

int run(const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const aminet::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const aminet::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const aminet::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-instance bag classification experiments"};
  app.set_config("--config", "", "Flat key = value settings file");
  app.require_subcommand(1);
  Options options;
  add_options(app, options);

  using Command = std::function<void(const aminet::ExperimentConfig&)>;
  const std::vector<std::tuple<std::string, std::string, Command>> commands{
      {"train", "Fit on a train/validation split, write checkpoint and log",
       [](const auto& c) {
         const auto r = aminet::cmd_train(c);
         std::cout << "best_epoch=" << r.fit.best_epoch
                   << " validation_f1=" << aminet::format_number(r.fit.best_f1) << "\n"
                   << "wrote " << r.checkpoint.string() << " and " << r.log.string() << "\n";
       }},
      {"cv", "Repeated stratified cross-validation",
       [](const auto& c) { print_written(aminet::cmd_cv(c)); }},
      {"ablate-heads", "Mean CV F1 per attention head count",
       [](const auto& c) { print_written(aminet::cmd_ablate_heads(c)); }},
      {"ablate-pooling", "Mean CV F1 per pooling combination",
       [](const auto& c) { print_written(aminet::cmd_ablate_pooling(c)); }},
      {"noise-sweep", "Mean CV F1 under feature or label noise on training folds",
       [](const auto& c) { print_written(aminet::cmd_noise_sweep(c)); }},
      {"incomplete-sweep", "Mean CV F1 under instance deletion on training folds",
       [](const auto& c) { print_written(aminet::cmd_incomplete_sweep(c)); }},
      {"attention-export", "Per-record bag-pooling weights from a checkpoint",
       [](const auto& c) { print_written(aminet::cmd_attention_export(c)); }},
      {"generate", "Write the configured synthetic dataset as JSONL",
       [](const auto& c) { print_written(aminet::cmd_generate(c)); }},
  };
  std::map<CLI::App*, Command> dispatch;
  for (const auto& [name, help, command] : commands) {
    dispatch[app.add_subcommand(name, help)->fallthrough()] = command;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  return run([&] {
    const aminet::ExperimentConfig config = finish(options);
    for (auto* sub : app.get_subcommands()) dispatch.at(sub)(config);
  });
}
