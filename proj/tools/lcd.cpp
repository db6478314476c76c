#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>

#include "CLI11.hpp"
#include "lcd/pipeline.hpp"

namespace fs = std::filesystem;
using namespace lcd;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitRuntime = 4;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig:
    case ErrorCode::kShapeMismatch:
    case ErrorCode::kInvalidArgument:
      return kExitConfig;
    case ErrorCode::kIo:
    case ErrorCode::kParse:
    case ErrorCode::kVersionMismatch:
    case ErrorCode::kEmptyInput:
    case ErrorCode::kInvalidDepth:
      return kExitData;
    default:
      return kExitRuntime;
  }
}

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

PipelineConfig effective_config(const Common& c) {
  PipelineConfig cfg = c.config_path.empty() ? PipelineConfig{} : PipelineConfig::load(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  std::cerr << "config hash " << cfg.hash() << "\n";
  return cfg;
}

void emit(nlohmann::json report, const PipelineConfig& cfg, const std::string& out_file) {
  report["config_hash"] = cfg.hash();
  report["seed"] = cfg.seed;
  std::cout << report.dump() << "\n";
  if (!out_file.empty()) {
    std::ofstream os(out_file);
    if (!(os << report.dump(2) << "\n")) throw Error(ErrorCode::kIo, "cannot write report " + out_file);
  }
}

fs::path require_dir(const std::string& out) {
  if (out.empty()) throw Error(ErrorCode::kConfig, "--out is required");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + out + ": " + ec.message());
  return out;
}

void append_jsonl(const fs::path& path, const nlohmann::json& record) {
  std::ofstream os(path, std::ios::app);
  if (!(os << record.dump() << "\n")) throw Error(ErrorCode::kIo, "cannot append to " + path.string());
}

int cmd_synth(const Common& c) {
  const PipelineConfig cfg = effective_config(c);
  SynthConfig s = cfg.synth;
  s.seed = derive_seed(cfg.seed, 1);
  const fs::path out = require_dir(c.out);
  synthesize_dataset(out, s);
  std::size_t frames = 0;
  const auto index = read_dataset_index(out);
  for (const auto& si : index) frames += si.frames.size();
  std::cerr << "wrote " << index.size() << " scenes, " << frames << " frames to " << out << "\n";
  emit({{"command", "synth"}, {"scenes", index.size()}, {"frames", frames}}, cfg, "");
  return 0;
}

int cmd_extract(const Common& c, const std::string& dataset) {
  const PipelineConfig cfg = effective_config(c);
  if (c.out.empty()) throw Error(ErrorCode::kConfig, "--out is required");
  const ExtractionReport rep = extract_dataset(dataset, cfg.extract, derive_seed(cfg.seed, 2), worker_count());
  for (const auto& w : rep.warnings)
    std::cerr << "warning: scene " << w.scene_id << " frame " << w.frame_id << ": " << w.message << "\n";
  for (const auto& f : rep.failures)
    std::cerr << "error: scene " << f.scene_id << " frame " << f.frame_id << ": " << f.message << "\n";
  if (rep.data.empty()) throw Error(ErrorCode::kEmptyInput, "no frame could be extracted");
  write_line_dataset(c.out, rep.data);
  std::size_t lines = 0, max_lines = 0;
  for (const auto& f : rep.data) {
    lines += f.lines.size();
    max_lines = std::max(max_lines, f.lines.size());
  }
  emit({{"command", "extract"},
        {"frames", rep.data.size()},
        {"lines", lines},
        {"max_lines_per_frame", max_lines},
        {"failed_frames", rep.failures.size()},
        {"empty_frames", rep.warnings.size()}},
       cfg, "");
  return rep.failures.empty() ? 0 : kExitData;
}

struct TrainArgs {
  std::string dataset, validation, cluster;
  int epochs = -1;
  bool no_attention = false;
};

int cmd_train_cluster(const Common& c, const TrainArgs& a) {
  PipelineConfig cfg = effective_config(c);
  if (a.no_attention) cfg.cluster.attention_enabled = false;
  const fs::path out = require_dir(c.out);
  const LineDataset train = read_line_dataset(a.dataset);
  const LineDataset val = a.validation.empty() ? LineDataset{} : read_line_dataset(a.validation);
  const std::string stem = cfg.cluster.attention_enabled ? "cluster" : "cluster_noattn";
  const fs::path ckpt = out / (stem + ".ckpt"), metrics = out / (stem + "_metrics.jsonl");

  std::unique_ptr<ClusterNet<float>> net;
  ClusterTrainState state;
  if (fs::exists(ckpt)) {
    nn::Checkpoint raw;
    net = load_cluster_checkpoint(ckpt, cfg.cluster, &raw);
    state = make_cluster_train_state(*net);
    if (raw.metadata.contains("next_epoch")) {
      raw.load_optimizer(state.adam, "adam");
      state.next_epoch = raw.metadata.at("next_epoch").get<int>();
    }
    std::cerr << "resuming " << ckpt << " at epoch " << state.next_epoch << "\n";
  } else {
    net = std::make_unique<ClusterNet<float>>(cfg.cluster, derive_seed(cfg.seed, 3, 0));
    state = make_cluster_train_state(*net);
    std::ofstream(metrics, std::ios::trunc);
    if (cfg.cluster.pretrain_epochs > 0) {
      const double l = pretrain_visual(*net, train, derive_seed(cfg.seed, 3, 1));
      std::cerr << "visual pretraining loss " << l << "\n";
    }
    save_cluster_checkpoint(ckpt, *net, &state);
  }
  ClusterTrainOptions opts;
  opts.seed = derive_seed(cfg.seed, 3, 2);
  opts.epochs = a.epochs;
  opts.on_epoch = [&](const ClusterEpochMetrics& m, ClusterTrainState& s) {
    append_jsonl(metrics, m.to_json());
    save_cluster_checkpoint(ckpt, *net, &s);
    std::cerr << "epoch " << m.epoch << " loss " << m.loss << " val_nmi " << m.val_nmi << "\n";
  };
  const auto log = train_clustering(state, train, val, opts);
  nlohmann::json r{{"command", "train-cluster"}, {"checkpoint", ckpt.string()}, {"epochs_run", log.size()},
                   {"next_epoch", state.next_epoch}};
  if (!log.empty()) r["final"] = log.back().to_json();
  emit(r, cfg, "");
  return 0;
}

int cmd_train_descriptor(const Common& c, const TrainArgs& a) {
  const PipelineConfig cfg = effective_config(c);
  if (a.cluster.empty() || !fs::exists(a.cluster))
    throw Error(ErrorCode::kIo, "descriptor training needs a clustering checkpoint (--cluster) for its visual encoder");
  const fs::path out = require_dir(c.out);
  const LineDataset train = read_line_dataset(a.dataset);
  const LineDataset val = a.validation.empty() ? LineDataset{} : read_line_dataset(a.validation);
  const fs::path ckpt = out / "descriptor.ckpt", metrics = out / "descriptor_metrics.jsonl";
  auto source = load_cluster_checkpoint(a.cluster, std::nullopt);

  std::unique_ptr<DescriptorNet<float>> net;
  DescriptorTrainState state;
  if (fs::exists(ckpt)) {
    nn::Checkpoint raw;
    net = load_descriptor_checkpoint(ckpt, cfg.descriptor, &raw);
    state = make_descriptor_train_state(*net);
    if (raw.metadata.contains("next_epoch")) {
      raw.load_optimizer(state.adam, "adam");
      state.next_epoch = raw.metadata.at("next_epoch").get<int>();
    }
    std::cerr << "resuming " << ckpt << " at epoch " << state.next_epoch << "\n";
  } else {
    net = std::make_unique<DescriptorNet<float>>(cfg.descriptor, source->config().visual_shape(),
                                                 derive_seed(cfg.seed, 4, 0));
    adopt_visual_encoder(*net, *source);
    state = make_descriptor_train_state(*net);
    std::ofstream(metrics, std::ios::trunc);
    save_descriptor_checkpoint(ckpt, *net, &state);
  }
  DescriptorTrainOptions opts;
  opts.seed = derive_seed(cfg.seed, 4, 2);
  opts.epochs = a.epochs;
  opts.on_epoch = [&](const DescriptorEpochMetrics& m, DescriptorTrainState& s) {
    append_jsonl(metrics, m.to_json());
    save_descriptor_checkpoint(ckpt, *net, &s);
    std::cerr << "epoch " << m.epoch << " loss " << m.loss << " val_accuracy " << m.val_accuracy << "\n";
  };
  const auto log = train_descriptor(state, train, val, opts);
  nlohmann::json r{{"command", "train-descriptor"}, {"checkpoint", ckpt.string()}, {"epochs_run", log.size()},
                   {"next_epoch", state.next_epoch}};
  if (!log.empty()) r["final"] = log.back().to_json();
  emit(r, cfg, "");
  return 0;
}

struct EvalArgs {
  std::string mode = "place", dataset, cluster, ablation, descriptor, embeddings;
  std::optional<std::size_t> k_nn;
  bool gtc = false, no_attention = false, agglo = false;
};

int cmd_eval(const Common& c, const EvalArgs& a) {
  PipelineConfig cfg = effective_config(c);
  if (a.k_nn) cfg.retrieval.k_nn = *a.k_nn;
  cfg.validate();
  const LineDataset data = read_line_dataset(a.dataset);
  const std::uint64_t seed = derive_seed(cfg.seed, 5);
  auto need = [](const std::string& path, const char* flag) {
    if (path.empty()) throw Error(ErrorCode::kIo, std::string("missing required checkpoint ") + flag);
  };
  nlohmann::json r{{"command", "eval"}, {"mode", a.mode}, {"frames", data.size()}};
  if (a.mode == "clustering") {
    need(a.cluster, "--cluster");
    auto net = load_cluster_checkpoint(a.cluster, std::nullopt);
    r["nmi"] = mean_nmi(*net, data, nullptr, seed);
    if (a.no_attention) {
      need(a.ablation, "--ablation");
      auto ab = load_cluster_checkpoint(a.ablation, std::nullopt);
      if (ab->config().attention_enabled)
        throw Error(ErrorCode::kConfig, "--ablation checkpoint was trained with attention enabled");
      r["nmi_no_attention"] = mean_nmi(*ab, data, nullptr, seed);
    }
    if (a.agglo) r["nmi_agglomerative"] = mean_agglomerative_nmi(data, cfg.retrieval.agglomerative);
    std::cerr << "mean NMI " << r["nmi"].get<double>() << "\n";
  } else if (a.mode == "place") {
    need(a.descriptor, "--descriptor");
    auto desc = load_descriptor_checkpoint(a.descriptor, std::nullopt);
    std::unique_ptr<ClusterNet<float>> clusterer;
    if (!a.gtc) {
      need(a.cluster, "--cluster");
      clusterer = load_cluster_checkpoint(a.cluster, std::nullopt);
    }
    const auto frames = embed_frames(*desc, clusterer.get(), data, seed);
    if (!a.embeddings.empty()) {
      std::vector<ClusterEmbedding> all;
      for (const auto& f : frames) all.insert(all.end(), f.clusters.begin(), f.clusters.end());
      write_embeddings(a.embeddings, all);
    }
    const LeaveOneOutReport rep = leave_one_out_accuracy(frames, cfg.retrieval.k_nn, cfg.retrieval.min_lines);
    std::set<int> scenes;
    for (const auto& f : data) scenes.insert(f.scene_id);
    r["accuracy"] = rep.accuracy;
    r["correct"] = rep.correct;
    r["total"] = rep.total;
    r["scenes"] = scenes.size();
    r["chance"] = scenes.empty() ? 0.0 : 1.0 / static_cast<double>(scenes.size());
    r["k_nn"] = cfg.retrieval.k_nn;
    r["gtc"] = a.gtc;
    std::cerr << "leave-one-out accuracy " << rep.accuracy << " (" << rep.correct << "/" << rep.total << ")\n";
  } else {
    throw Error(ErrorCode::kConfig, "--mode must be clustering or place");
  }
  emit(r, cfg, c.out);
  return 0;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "JSON pipeline configuration");
  app->add_option("--seed", c.seed, "root seed, overrides the config");
  app->add_option("--out", c.out, "output path");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Line-cluster place recognition pipeline"};
  app.require_subcommand(1);
  Common common;
  std::string dataset;
  TrainArgs train;
  EvalArgs eval;

  auto* synth = app.add_subcommand("synth", "generate a synthetic RGB-D dataset");
  add_common(synth, common);

  auto* extract = app.add_subcommand("extract", "extract labelled 3D lines and virtual images");
  add_common(extract, common);
  extract->add_option("--dataset", dataset, "dataset directory")->required();

  auto* tc = app.add_subcommand("train-cluster", "train the line clustering network");
  add_common(tc, common);
  tc->add_option("--dataset", train.dataset, "training line file")->required();
  tc->add_option("--val", train.validation, "validation line file");
  tc->add_option("--epochs", train.epochs, "stop after this many epochs in total");
  tc->add_flag("--no-attention", train.no_attention, "train the fully connected ablation");

  auto* td = app.add_subcommand("train-descriptor", "train the cluster descriptor network");
  add_common(td, common);
  td->add_option("--dataset", train.dataset, "training line file")->required();
  td->add_option("--val", train.validation, "validation line file");
  td->add_option("--epochs", train.epochs, "stop after this many epochs in total");
  td->add_option("--cluster", train.cluster, "clustering checkpoint providing the visual encoder");

  auto* ev = app.add_subcommand("eval", "evaluate clustering or place recognition");
  add_common(ev, common);
  ev->add_option("--dataset", eval.dataset, "line file")->required();
  ev->add_option("--mode", eval.mode, "clustering or place");
  ev->add_option("--cluster", eval.cluster, "clustering checkpoint");
  ev->add_option("--ablation", eval.ablation, "checkpoint trained with --no-attention");
  ev->add_option("--descriptor", eval.descriptor, "descriptor checkpoint");
  ev->add_option("--embeddings", eval.embeddings, "write cluster embeddings here");
  ev->add_option("--k-nn", eval.k_nn, "neighbours per query cluster");
  ev->add_flag("--gtc", eval.gtc, "use ground-truth clusters");
  ev->add_flag("--no-attention", eval.no_attention, "also report the ablation checkpoint");
  ev->add_flag("--agglo-baseline", eval.agglo, "also report the agglomerative baseline");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }
  try {
    if (*synth) return cmd_synth(common);
    if (*extract) return cmd_extract(common, dataset);
    if (*tc) return cmd_train_cluster(common, train);
    if (*td) return cmd_train_descriptor(common, train);
    return cmd_eval(common, eval);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
