// Command-line front end: two-stage training (sft, pref), evaluation,
// sweeps, dataset construction and embedding export over the mcmdpo core.

#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mcmdpo/checkpoint.hpp"
#include "mcmdpo/llm_client.hpp"
#include "mcmdpo/pipeline.hpp"
#include "mcmdpo/reject.hpp"
#include "mcmdpo/synth.hpp"
#include "mcmdpo/train.hpp"

namespace {

using namespace mcmdpo;

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::unique_ptr<LlmClient> make_client(const std::string& spec) {
  if (spec == "reference") return std::make_unique<ReferenceJudge>();
  if (spec == "first") return std::make_unique<FirstOptionJudge>();
  if (spec == "clean") return std::make_unique<CleanGrammarClient>();
  if (spec == "http") return make_http_client(LlmClientConfig::from_env());
  if (spec.rfind("echo:", 0) == 0) return std::make_unique<EchoClient>(spec.substr(5));
  throw std::invalid_argument("unknown client spec '" + spec +
                              "' (want reference|first|clean|http|echo:<text>)");
}

// Shared train-config flags. The config file (if any) is loaded into `cfg`
// before CLI11 parses, and CLI11 only writes a bound field when its flag is
// present, so explicit flags override file values.
struct ConfigFlags {
  std::string preset;

  void attach(CLI::App* cmd, train::TrainConfig& cfg) {
    cmd->add_option("--config", "JSON config file (flags override it)")
        ->expected(1);  // consumed by the pre-scan below
    cmd->add_option("--preset", preset, "named schedule preset (paper-schedule)");
    auto opt = [&cfg, cmd](const char* flag, auto& field, const char* help) {
      cmd->add_option(flag, field, help);
    };
    opt("--seed", cfg.seed, "run seed");
    opt("--optimizer", cfg.optimizer, "adam|sgd");
    opt("--lr", cfg.lr, "learning rate");
    opt("--epochs", cfg.epochs, "training epochs");
    opt("--batch-size", cfg.batch_size, "batch size");
    opt("--paradigm", cfg.paradigm, "P1|P2|P3|P4 vision-encoder schedule");
    opt("--method", cfg.method, "dpo|mcm_dpo");
    opt("--lambda", cfg.weights.lambda, "response-term weight");
    opt("--alpha", cfg.weights.alpha, "single visual/context weight");
    opt("--gamma", cfg.weights.gamma, "pairwise/multi weight");
    opt("--beta", cfg.weights.beta, "reward temperature");
    opt("--prompt", cfg.prompt_text, "instruction prompt text");
    opt("--gen-max-len", cfg.gen_max_len, "generation budget");
    opt("--patch-size", cfg.dims.patch_size, "vision patch size");
    opt("--embed-dim", cfg.dims.embed_dim, "embedding width");
    opt("--hidden-dim", cfg.dims.hidden_dim, "attention width");
    opt("--train-data", cfg.train_data, "training dataset (jsonl)");
    opt("--manifest", cfg.pref_manifest, "preference manifest (jsonl)");
    opt("--test-data", cfg.test_data, "test dataset (jsonl)");
    opt("--vocab", cfg.vocab_path, "vocabulary file (json)");
    opt("--ckpt-in", cfg.checkpoint_in, "input checkpoint manifest");
    opt("--ckpt-out", cfg.checkpoint_out, "output checkpoint manifest");
    opt("--report", cfg.report_path, "run-report output (json)");
    cmd->add_flag("--deterministic-report", cfg.deterministic_report,
                  "write zero wall time so identical runs produce identical reports");
  }

  void finalize(train::TrainConfig& cfg) const {
    if (!preset.empty()) cfg.apply_preset(preset);
  }
};

// Loads --config into the subcommand's config before CLI11 assigns flags.
void preload_config(int argc, char** argv, const std::string& subcommand,
                    train::TrainConfig& cfg) {
  if (argc < 2 || subcommand != argv[1]) return;
  for (int i = 2; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config") {
      cfg.load_json_file(argv[i + 1]);
      return;
    }
  }
}

int cmd_gen_synth(uint64_t seed, int n_train, int n_pref, int n_test,
                  const std::string& out_dir, int grid, int cell_pixels) {
  synth::SynthConfig cfg;
  cfg.grid = grid;
  cfg.cell_pixels = cell_pixels;
  const synth::SynthDataset data = synth::gen_dataset(seed, n_train, n_pref, n_test, cfg);

  std::filesystem::create_directories(out_dir);
  const auto dir = std::filesystem::path(out_dir);
  pipeline::write_dataset(train::to_raw_posts(data.train), (dir / "train.jsonl").string());
  pipeline::write_dataset(train::to_raw_posts(data.pref), (dir / "pref.jsonl").string());
  pipeline::write_dataset(train::to_raw_posts(data.test), (dir / "test.jsonl").string());
  data.vocab.save((dir / "vocab.json").string());
  std::cout << "wrote " << data.train.size() << "/" << data.pref.size() << "/"
            << data.test.size() << " samples and a " << data.vocab.size()
            << "-token vocabulary to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale multimodal preference-optimization lab"};
  app.require_subcommand(1);

  // gen-synth ----------------------------------------------------------------
  uint64_t gs_seed = 0;
  int gs_train = 512, gs_pref = 128, gs_test = 128, gs_grid = 2, gs_cell = 8;
  std::string gs_out = "data";
  auto* gen = app.add_subcommand("gen-synth", "generate the synthetic micro-dataset");
  gen->add_option("--seed", gs_seed);
  gen->add_option("--train", gs_train);
  gen->add_option("--pref", gs_pref);
  gen->add_option("--test", gs_test);
  gen->add_option("--grid", gs_grid);
  gen->add_option("--cell-pixels", gs_cell);
  gen->add_option("--out-dir", gs_out);

  // build-data ----------------------------------------------------------------
  std::string bd_input, bd_vocab, bd_out_manifest = "pref_manifest.jsonl";
  std::string bd_out_vocab, bd_out_clean;
  std::string bd_strategy = "diffusion:700", bd_mode = "synthetic";
  std::string bd_judge = "reference", bd_grammar = "clean", bd_reject_client = "http";
  uint64_t bd_seed = 0;
  double bd_dedup = 0.95;
  bool bd_no_grammar = false;
  auto* build = app.add_subcommand("build-data", "run the dataset-construction pipeline");
  build->add_option("--input", bd_input, "raw dataset (jsonl)")->required();
  build->add_option("--vocab", bd_vocab, "existing vocabulary to encode with (optional)");
  build->add_option("--out-manifest", bd_out_manifest);
  build->add_option("--out-vocab", bd_out_vocab, "write the (possibly built) vocabulary here");
  build->add_option("--out-clean", bd_out_clean, "write cleaned samples here");
  build->add_option("--strategy", bd_strategy, "diffusion[:T]|blackness|crop|rotation|randomness");
  build->add_option("--reject-mode", bd_mode, "synthetic|external");
  build->add_option("--judge", bd_judge, "judge client (reference|first|http|echo:<s>)");
  build->add_option("--grammar-client", bd_grammar, "grammar client (clean|http|echo:<s>)");
  build->add_option("--reject-client", bd_reject_client, "external reject client");
  build->add_option("--seed", bd_seed);
  build->add_option("--dedup-threshold", bd_dedup);
  build->add_flag("--no-grammar", bd_no_grammar, "skip grammar correction");

  // training/eval/sweep/export --------------------------------------------------
  train::TrainConfig sft_cfg = train::TrainConfig::sft_defaults();
  ConfigFlags sft_flags;
  auto* sft = app.add_subcommand("sft", "stage 1: supervised fine-tuning");
  sft_flags.attach(sft, sft_cfg);

  train::TrainConfig pref_cfg = train::TrainConfig::pref_defaults();
  ConfigFlags pref_flags;
  std::string pref_ablation;
  auto* pref = app.add_subcommand("pref", "stage 2: preference optimization");
  pref_flags.attach(pref, pref_cfg);
  pref->add_option("--ablation", pref_ablation, "zero loss groups, e.g. -Multi or -Single+Pair");

  train::TrainConfig eval_cfg = train::TrainConfig::pref_defaults();
  ConfigFlags eval_flags;
  std::string eval_json = "eval.json", eval_csv = "eval.csv";
  auto* eval = app.add_subcommand("eval", "greedy generation plus the metric suite");
  eval_flags.attach(eval, eval_cfg);
  eval->add_option("--out-json", eval_json);
  eval->add_option("--out-csv", eval_csv);

  train::TrainConfig sweep_cfg = train::TrainConfig::pref_defaults();
  ConfigFlags sweep_flags;
  std::string sweep_kind, sweep_grid, sweep_csv = "sweep.csv", sweep_pref_raw;
  auto* sweep = app.add_subcommand("sweep", "grid of preference runs (gamma|noise_T|strategy|ablation)");
  sweep_flags.attach(sweep, sweep_cfg);
  sweep->add_option("--kind", sweep_kind)->required();
  sweep->add_option("--grid", sweep_grid, "comma-separated grid values")->required();
  sweep->add_option("--pref-data", sweep_pref_raw, "raw preference split (noise_T/strategy)");
  sweep->add_option("--out-csv", sweep_csv);

  train::TrainConfig emb_cfg = train::TrainConfig::pref_defaults();
  ConfigFlags emb_flags;
  std::string emb_data, emb_csv = "embeddings.csv";
  int emb_max_samples = 100;
  auto* emb = app.add_subcommand("export-embeddings",
                                 "final-position hidden states projected onto 2 PCs");
  emb_flags.attach(emb, emb_cfg);
  emb->add_option("--data", emb_data, "samples to embed (jsonl)")->required();
  emb->add_option("--out-csv", emb_csv);
  emb->add_option("--max-samples", emb_max_samples);

  preload_config(argc, argv, "sft", sft_cfg);
  preload_config(argc, argv, "pref", pref_cfg);
  preload_config(argc, argv, "eval", eval_cfg);
  preload_config(argc, argv, "sweep", sweep_cfg);
  preload_config(argc, argv, "export-embeddings", emb_cfg);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      return cmd_gen_synth(gs_seed, gs_train, gs_pref, gs_test, gs_out, gs_grid, gs_cell);
    }

    if (build->parsed()) {
      pipeline::PipelineConfig pc;
      pc.dedup_threshold = bd_dedup;
      pc.grammar_correction = !bd_no_grammar;
      pc.image_strategy = RejectImageStrategy::parse(bd_strategy);
      pc.reject_mode = parse_reject_mode(bd_mode);
      pc.seed = bd_seed;

      auto judge = make_client(bd_judge);
      auto grammar = make_client(bd_grammar);
      std::unique_ptr<LlmClient> reject_client;
      pipeline::PipelineClients clients;
      clients.judge = judge.get();
      clients.grammar = grammar.get();
      if (pc.reject_mode == RejectResponseMode::external_client) {
        reject_client = make_client(bd_reject_client);
        clients.reject = reject_client.get();
      }

      pipeline::IngestResult ingested = pipeline::ingest(bd_input);
      pipeline::PipelineOutput out;
      if (!bd_vocab.empty()) {
        // Encode against the provided vocabulary (checkpoint compatibility).
        const Vocabulary vocab = Vocabulary::load(bd_vocab);
        std::vector<pipeline::RawPost> cleaned;
        for (pipeline::RawPost& post : ingested.posts) {
          const auto decision = pipeline::filter_sample(post, pc.rules);
          if (!decision.keep) {
            out.drops.push_back({post.id, pipeline::drop_reason_code(decision.reason)});
            continue;
          }
          cleaned.push_back(std::move(post));
        }
        auto dd = pipeline::dedup(cleaned, pipeline::Embedder::toy(), pc.dedup_threshold);
        for (const auto& id : dd.dropped_ids) out.drops.push_back({id, "duplicate"});
        out.cleaned = std::move(dd.kept);
        out.vocab = vocab;
        out.manifest =
            pipeline::build_preference_manifest(out.cleaned, vocab, pc, clients, &out.drops);
      } else {
        out = pipeline::run_pipeline(std::move(ingested.posts), pc, clients);
      }

      pipeline::write_manifest(out.manifest, bd_out_manifest);
      if (!bd_out_vocab.empty()) out.vocab.save(bd_out_vocab);
      if (!bd_out_clean.empty()) pipeline::write_dataset(out.cleaned, bd_out_clean);
      std::cout << "manifest: " << out.manifest.items.size() << " items ("
                << out.drops.size() << " drops) -> " << bd_out_manifest << "\n";
      return 0;
    }

    if (sft->parsed()) {
      sft_flags.finalize(sft_cfg);
      sft_cfg.stage = "sft";
      const train::RunReport report = train::run_sft(sft_cfg);
      std::cout << "sft done: final loss " << report.epochs.back().loss << " in "
                << report.wall_time_seconds << "s\n";
      return 0;
    }

    if (pref->parsed()) {
      pref_flags.finalize(pref_cfg);
      pref_cfg.stage = "pref";
      if (!pref_ablation.empty()) pref_cfg.term_mask = train::parse_ablation(pref_ablation).enabled;
      const train::RunReport report = train::run_pref(pref_cfg);
      std::cout << "pref done: initial loss " << report.initial_loss.value_or(0.0)
                << ", final loss " << report.epochs.back().loss << " in "
                << report.wall_time_seconds << "s\n";
      return 0;
    }

    if (eval->parsed()) {
      eval_flags.finalize(eval_cfg);
      const metrics::MetricReport report = train::run_eval(eval_cfg, eval_json, eval_csv);
      std::cout << report.to_json() << "\n";
      return 0;
    }

    if (sweep->parsed()) {
      sweep_flags.finalize(sweep_cfg);
      train::run_sweep(sweep_kind, split_csv(sweep_grid), sweep_cfg, sweep_pref_raw, sweep_csv);
      std::cout << "sweep table -> " << sweep_csv << "\n";
      return 0;
    }

    if (emb->parsed()) {
      emb_flags.finalize(emb_cfg);
      const Vocabulary vocab = Vocabulary::load(emb_cfg.vocab_path);
      const Checkpoint ckpt = load_checkpoint(emb_cfg.checkpoint_in);
      pipeline::IngestResult data = pipeline::ingest(emb_data);
      if (static_cast<int>(data.posts.size()) > emb_max_samples) {
        data.posts.resize(static_cast<size_t>(emb_max_samples));
      }
      train::export_embeddings(ckpt.params, vocab, data.posts, emb_cfg.prompt_text,
                               emb_cfg.gen_max_len, emb_csv);
      std::cout << "embeddings -> " << emb_csv << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
