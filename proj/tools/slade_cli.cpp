// slade: semi-supervised metric-learning pipeline driver.
//
// Subcommands cover the whole workflow: synthetic data generation, teacher
// training, pseudo-labeling, student training, the full self-training loop,
// fold concatenation, retrieval evaluation and the gradient-check battery.
//
// Exit codes: 0 success, 1 validation error (bad flags, files, config),
// 2 runtime failure.

#include <chrono>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "slade/report.hpp"
#include "slade/slade.hpp"

namespace fs = std::filesystem;
using namespace slade;

namespace {

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ValidationError("cannot create output directory: " + dir);
}

Dataset load_labeled(const std::string& path) {
  Dataset d = load_dataset(path);
  for (int l : d.labels)
    if (l < 0) throw ValidationError(path + ": expected a fully labeled dataset");
  return d;
}

struct CommonTrainArgs {
  std::string config_path;
  std::string labeled_path;
  std::string unlabeled_path;
  std::string eval_path;
  std::string out_dir;
};

std::optional<Dataset> maybe_eval(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return load_labeled(path);
}

void write_history_report(const CommonTrainArgs& args, const std::string& command,
                          const TrainConfig& cfg, const std::string& cfg_bytes,
                          const std::vector<RoundRecord>& history) {
  RunReportInputs inputs;
  inputs.command = command;
  inputs.seed = cfg.seed;
  inputs.labeled_path = args.labeled_path.empty() ? "-" : args.labeled_path;
  inputs.unlabeled_path = args.unlabeled_path.empty() ? "-" : args.unlabeled_path;
  inputs.eval_path = args.eval_path.empty() ? "-" : args.eval_path;
  inputs.config_bytes = cfg_bytes;
  write_text_file(args.out_dir + "/report.txt", build_run_report(inputs, history));
}

void print_round_summary(const std::vector<RoundRecord>& history) {
  for (const RoundRecord& r : history) {
    std::cout << "round " << r.round << " (" << r.role << ") checkpoint " << r.checkpoint;
    if (!r.epochs.empty()) std::cout << " final_loss " << r.epochs.back().total;
    if (r.heldout) std::cout << " map_at_r " << r.heldout->map_at_r;
    std::cout << "\n";
  }
}

int run_gradcheck_cmd() {
  auto results = run_gradient_checks();
  bool all = true;
  for (const auto& r : results) {
    std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << "  probes=" << r.probes
              << "  max_rel_err=" << r.max_rel_err << "\n";
    all = all && r.pass;
  }
  if (!all) throw std::runtime_error("gradient checks failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"slade: self-training for distance metric learning"};
  app.require_subcommand(1);

  // --- gen-data ------------------------------------------------------------
  SynthSpec spec;
  long long spec_seed = 1;
  std::string out_labeled, out_unlabeled, out_truth;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic seen/unseen benchmark");
  gen->add_option("--seen", spec.seen_classes, "seen (labeled) class count");
  gen->add_option("--unseen", spec.unseen_classes, "unseen class count (unlabeled only)");
  gen->add_option("--samples-per-class", spec.samples_per_class, "samples per class");
  gen->add_option("--dim", spec.dim, "feature dimension");
  gen->add_option("--separation", spec.center_separation, "center sphere radius / min distance");
  gen->add_option("--within-std", spec.within_std, "within-class standard deviation");
  gen->add_option("--seed", spec_seed, "generator seed");
  gen->add_option("--out-labeled", out_labeled, "labeled dataset path")->required();
  gen->add_option("--out-unlabeled", out_unlabeled, "unlabeled dataset path")->required();
  gen->add_option("--out-truth", out_truth, "ground-truth sidecar path")->required();

  // --- shared train options --------------------------------------------------
  CommonTrainArgs targs;

  auto* teacher = app.add_subcommand("train-teacher", "fit a teacher embedding on labeled data");
  teacher->add_option("--config", targs.config_path, "config file")->required();
  teacher->add_option("--labeled", targs.labeled_path, "labeled dataset")->required();
  teacher->add_option("--eval", targs.eval_path, "labeled eval dataset (optional)");
  teacher->add_option("--out", targs.out_dir, "output directory")->required();

  std::string params_path, out_data, out_model;
  auto* plabel = app.add_subcommand("pseudo-label", "cluster unlabeled data with a teacher");
  plabel->add_option("--config", targs.config_path, "config file")->required();
  plabel->add_option("--params", params_path, "teacher parameter file")->required();
  plabel->add_option("--unlabeled", targs.unlabeled_path, "unlabeled dataset")->required();
  plabel->add_option("--out-data", out_data, "pseudo-labeled dataset path")->required();
  plabel->add_option("--out-model", out_model, "cluster model path")->required();

  std::string pseudo_path, init_path;
  auto* student = app.add_subcommand("train-student", "joint student/basis training");
  student->add_option("--config", targs.config_path, "config file")->required();
  student->add_option("--labeled", targs.labeled_path, "labeled dataset")->required();
  student->add_option("--pseudo", pseudo_path, "pseudo-labeled dataset (from pseudo-label)")
      ->required();
  student->add_option("--init", init_path, "initial parameters (teacher checkpoint)")->required();
  student->add_option("--eval", targs.eval_path, "labeled eval dataset (optional)");
  student->add_option("--out", targs.out_dir, "output directory")->required();

  auto* selftrain = app.add_subcommand("self-train", "full iterative pipeline");
  selftrain->add_option("--config", targs.config_path, "config file")->required();
  selftrain->add_option("--labeled", targs.labeled_path, "labeled dataset")->required();
  selftrain->add_option("--unlabeled", targs.unlabeled_path, "unlabeled dataset")->required();
  selftrain->add_option("--eval", targs.eval_path, "labeled eval dataset (optional)");
  selftrain->add_option("--out", targs.out_dir, "output directory")->required();

  auto* folds = app.add_subcommand("run-folds", "per-fold training with concatenated evaluation");
  folds->add_option("--config", targs.config_path, "config file")->required();
  folds->add_option("--labeled", targs.labeled_path, "labeled dataset")->required();
  folds->add_option("--unlabeled", targs.unlabeled_path, "unlabeled dataset")->required();
  folds->add_option("--eval", targs.eval_path, "labeled eval dataset (optional)");
  folds->add_option("--out", targs.out_dir, "output directory")->required();

  std::vector<std::string> eval_params;
  std::string eval_data, eval_report, eval_ks = "1,2,4,8";
  auto* evaluate_cmd = app.add_subcommand("evaluate", "leave-one-out retrieval evaluation");
  evaluate_cmd->add_option("--params", eval_params,
                           "parameter file(s); several are concatenated")->required();
  evaluate_cmd->add_option("--data", eval_data, "labeled dataset")->required();
  evaluate_cmd->add_option("--ks", eval_ks, "comma-separated recall cutoffs");
  evaluate_cmd->add_option("--report", eval_report, "write the report here as well");

  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "run the finite-difference battery");
  (void)gradcheck_cmd;

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << "\n";
    return 1;
  }

  auto started = std::chrono::steady_clock::now();
  try {
    if (*gen) {
      if (spec_seed < 0) throw ValidationError("gen-data: seed must be nonnegative");
      spec.seed = static_cast<std::uint64_t>(spec_seed);
      SynthData data = generate_synth(spec);
      save_dataset(data.labeled, out_labeled);
      save_dataset(data.unlabeled, out_unlabeled);
      write_text_file(out_truth, serialize_truth(data.truth));
      std::cout << "wrote " << data.labeled.count() << " labeled and " << data.unlabeled.count()
                << " unlabeled samples\n";
    } else if (*teacher) {
      TrainConfig cfg = load_config(targs.config_path);
      std::string cfg_bytes = read_text_file(targs.config_path);
      Dataset labeled = load_labeled(targs.labeled_path);
      ensure_dir(targs.out_dir);
      TeacherResult tr = train_teacher(labeled, cfg);
      save_params(tr.params, targs.out_dir + "/teacher.params");
      RoundRecord rec;
      rec.round = 0;
      rec.role = "teacher";
      rec.checkpoint = params_checksum(tr.params);
      rec.epochs = std::move(tr.epochs);
      auto eval_set = maybe_eval(targs.eval_path);
      if (eval_set) rec.heldout = evaluate_params(tr.params, *eval_set);
      std::vector<RoundRecord> history{std::move(rec)};
      write_history_report(targs, "train-teacher", cfg, cfg_bytes, history);
      print_round_summary(history);
    } else if (*plabel) {
      TrainConfig cfg = load_config(targs.config_path);
      EmbeddingParams teacher_params = load_params(params_path);
      Dataset unlabeled = load_dataset(targs.unlabeled_path);
      PseudoLabelResult pl = generate_pseudo_labels(
          teacher_params, unlabeled, cfg.clusters, derive_seed(cfg.seed, streams::kKmeans, 1),
          cfg.kmeans_max_iter, cfg.kmeans_restarts);
      Dataset out;
      out.features = pl.set.features;
      out.labels = pl.set.pseudo_labels;
      out.labeled_file = true;
      save_dataset(out, out_data);
      write_text_file(out_model, serialize_cluster_model(pl.model));
      std::cout << "pseudo-labeled " << out.count() << " samples into " << pl.set.k
                << " clusters (teacher " << pl.set.source_teacher
                << ", inertia " << pl.model.inertia << ")\n";
    } else if (*student) {
      TrainConfig cfg = load_config(targs.config_path);
      std::string cfg_bytes = read_text_file(targs.config_path);
      Dataset labeled = load_labeled(targs.labeled_path);
      Dataset pseudo_data = load_labeled(pseudo_path);
      EmbeddingParams init = load_params(init_path);
      ensure_dir(targs.out_dir);

      PseudoLabeledSet pseudo;
      pseudo.features = pseudo_data.features;
      pseudo.pseudo_labels = pseudo_data.labels;
      pseudo.source_teacher = params_checksum(init);
      pseudo.k = static_cast<int>(pseudo_data.distinct_labels().size());

      int k_b = effective_basis_count(cfg, labeled);
      BasisMatrix basis = init_basis(derive_seed(cfg.seed, streams::kInitBasis, 1), k_b,
                                     cfg.embed_dim);
      GaussStats stats = make_gauss_stats(cfg.beta);
      if (cfg.use_basis) {
        WarmupResult w =
            warmup_basis(init, std::move(basis), labeled, pseudo, cfg.basis_warmup_iters, cfg, 1);
        basis = std::move(w.basis);
        stats = w.stats;
      }
      StudentResult sr = train_student(labeled, pseudo, cfg, init, std::move(basis), stats, 1);
      save_params(sr.params, targs.out_dir + "/student.params");
      write_text_file(targs.out_dir + "/basis.basis", serialize_basis(sr.basis));

      RoundRecord rec;
      rec.round = 1;
      rec.role = "student";
      rec.checkpoint = params_checksum(sr.params);
      rec.pseudo_source = pseudo.source_teacher;
      rec.epochs = std::move(sr.epochs);
      auto eval_set = maybe_eval(targs.eval_path);
      if (eval_set) rec.heldout = evaluate_params(sr.params, *eval_set);
      std::vector<RoundRecord> history{std::move(rec)};
      targs.unlabeled_path = pseudo_path;
      write_history_report(targs, "train-student", cfg, cfg_bytes, history);
      print_round_summary(history);
    } else if (*selftrain) {
      TrainConfig cfg = load_config(targs.config_path);
      std::string cfg_bytes = read_text_file(targs.config_path);
      Dataset labeled = load_labeled(targs.labeled_path);
      Dataset unlabeled = load_dataset(targs.unlabeled_path);
      auto eval_set = maybe_eval(targs.eval_path);
      ensure_dir(targs.out_dir);

      PipelineState st = self_train(labeled, unlabeled, cfg, eval_set);
      for (size_t i = 0; i < st.history.size(); ++i)
        save_params(st.round_checkpoints[i], targs.out_dir + "/round" +
                                                 std::to_string(st.history[i].round) + "_" +
                                                 st.history[i].role + ".params");
      save_params(st.student, targs.out_dir + "/student.params");
      if (st.basis.basis_count > 0)
        write_text_file(targs.out_dir + "/basis.basis", serialize_basis(st.basis));
      write_history_report(targs, "self-train", cfg, cfg_bytes, st.history);
      print_round_summary(st.history);
    } else if (*folds) {
      TrainConfig cfg = load_config(targs.config_path);
      std::string cfg_bytes = read_text_file(targs.config_path);
      Dataset labeled = load_labeled(targs.labeled_path);
      Dataset unlabeled = load_dataset(targs.unlabeled_path);
      auto eval_set = maybe_eval(targs.eval_path);
      ensure_dir(targs.out_dir);

      FoldRun run = run_folds(labeled, unlabeled, cfg, eval_set);
      std::vector<RoundRecord> history;
      for (size_t f = 0; f < run.fold_states.size(); ++f) {
        save_params(run.concat.models[f],
                    targs.out_dir + "/fold" + std::to_string(f) + "_student.params");
        for (const RoundRecord& r : run.fold_states[f].history) history.push_back(r);
      }
      if (run.heldout) {
        RoundRecord concat_rec;
        concat_rec.round = static_cast<int>(run.fold_states.size());
        concat_rec.role = "student";
        concat_rec.checkpoint = "concatenated";
        concat_rec.heldout = run.heldout;
        history.push_back(std::move(concat_rec));
      }
      write_history_report(targs, "run-folds", cfg, cfg_bytes, history);
      print_round_summary(history);
      if (run.heldout) std::cout << "concatenated map_at_r " << run.heldout->map_at_r << "\n";
    } else if (*evaluate_cmd) {
      Dataset data = load_labeled(eval_data);
      ConcatEmbedding concat;
      for (const std::string& p : eval_params) concat.models.push_back(load_params(p));
      std::vector<int> ks;
      std::istringstream ss(eval_ks);
      std::string tok;
      while (std::getline(ss, tok, ','))
        ks.push_back(static_cast<int>(parse_int_token(tok, "--ks")));
      if (ks.empty()) throw ValidationError("--ks: at least one cutoff required");

      EmbeddingBatch emb = concat.embed(data.features);
      RetrievalReport rep = evaluate_leave_one_out(emb.embeddings, data.labels, ks);
      std::string text = serialize_report(rep);
      std::cout << text;
      if (!eval_report.empty()) write_text_file(eval_report, text);
    } else if (*gradcheck_cmd) {
      return run_gradcheck_cmd();
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }

  auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started);
  std::cout << "completed in " << elapsed.count() << " s\n";
  return 0;
}
