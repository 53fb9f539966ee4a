#pragma once

// Run-history report document. The persisted report is fully deterministic
// for a fixed config and seed: it carries the seed, a byte-exact echo of the
// input config, per-round losses and retrieval metrics. Wall-clock timing is
// intentionally not part of the document (it would break byte-identical
// replays); the CLI prints timing to the console instead.

#include "slade/trainer.hpp"

namespace slade {

struct RunReportInputs {
  std::string command;
  std::uint64_t seed = 0;
  std::string labeled_path = "-";
  std::string unlabeled_path = "-";
  std::string eval_path = "-";
  std::string config_bytes;
};

inline std::string build_run_report(const RunReportInputs& in,
                                    const std::vector<RoundRecord>& history) {
  std::string out = "slade-report v1\n";
  out += "command " + in.command + "\n";
  out += "seed " + std::to_string(in.seed) + "\n";
  out += "labeled " + (in.labeled_path.empty() ? std::string("-") : in.labeled_path) + "\n";
  out += "unlabeled " + (in.unlabeled_path.empty() ? std::string("-") : in.unlabeled_path) + "\n";
  out += "eval " + (in.eval_path.empty() ? std::string("-") : in.eval_path) + "\n";
  out += "config_bytes " + std::to_string(in.config_bytes.size()) + "\n";
  out += in.config_bytes;
  out += "\n";

  for (const RoundRecord& r : history) {
    std::string tag = "round " + std::to_string(r.round) + " ";
    out += tag + "role " + r.role + " checkpoint " + r.checkpoint + " pseudo_source " +
           (r.pseudo_source.empty() ? std::string("-") : r.pseudo_source) + "\n";
    for (const EpochRecord& e : r.epochs) {
      out += tag + "epoch " + std::to_string(e.epoch) + " rank_labeled " +
             fmt_double(e.rank_labeled) + " rank_unlabeled " + fmt_double(e.rank_unlabeled) +
             " basis_ce " + fmt_double(e.basis_ce) + " basis_sd " + fmt_double(e.basis_sd) +
             " total " + fmt_double(e.total) + " mined_pos " + std::to_string(e.mined_positives) +
             " mined_neg " + std::to_string(e.mined_negatives) + " skipped " +
             std::to_string(e.skipped_mining_steps) + " starved_pos " +
             std::to_string(e.starved_positive_anchors) + " starved_neg " +
             std::to_string(e.starved_negative_anchors) + "\n";
    }
    if (r.heldout) {
      const RetrievalReport& m = *r.heldout;
      out += tag + "metrics map_at_r " + fmt_double(m.map_at_r) + " r_precision " +
             fmt_double(m.r_precision) + " p_at_1 " + fmt_double(m.p_at_1) + " query_count " +
             std::to_string(m.query_count) + " skipped_queries " +
             std::to_string(m.skipped_queries) + "\n";
      for (auto& [k, v] : m.recall_at_k)
        out += tag + "recall_at " + std::to_string(k) + " " + fmt_double(v) + "\n";
    }
  }
  out += "end\n";
  return out;
}

/// Recovers the byte-exact config echo embedded in a report.
inline std::string extract_config_echo(const std::string& report) {
  const std::string marker = "config_bytes ";
  auto pos = report.find("\n" + marker);
  if (pos == std::string::npos) throw ValidationError("report: missing config echo");
  pos += 1 + marker.size();
  auto eol = report.find('\n', pos);
  if (eol == std::string::npos) throw ValidationError("report: malformed config echo header");
  long long n = parse_int_token(report.substr(pos, eol - pos), "report config_bytes");
  if (eol + 1 + static_cast<size_t>(n) > report.size())
    throw ValidationError("report: truncated config echo");
  return report.substr(eol + 1, static_cast<size_t>(n));
}

}  // namespace slade
