#include "gmx/ablate.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "gmx/evalkit.hpp"

namespace gmx {

namespace {

// Fixed stream so the initial and final pseudo-mask scores see the same pairs.
constexpr std::uint64_t kPseudoStream = 7;

std::string num(const std::optional<double>& v) {
  if (!v) return {};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

struct Job {
  RunConfig config;
  std::string key;
  AblationRun result;
};

}  // namespace

std::vector<AblationRow> ablation_rows() {
  const KeyValues no_mitrans{{"mix.pairing", "similar"}, {"mix.mitrans", "false"}, {"mix.decouple_mode", "soft"}};
  return {
      {"baseline", {{"unsup_weight_max", "0"}}},
      {"+mix(random)", {{"mix.pairing", "random"}, {"mix.mitrans", "false"}, {"mix.decouple_mode", "soft"}}},
      {"+mix(similar)", no_mitrans},
      {"+MITrans", {{"mix.pairing", "similar"}, {"mix.mitrans", "true"}, {"mix.decouple_mode", "soft"}}},
      {"hard", {{"mix.pairing", "similar"}, {"mix.mitrans", "true"}, {"mix.decouple_mode", "hard"}}},
      {"soft", {{"mix.pairing", "similar"}, {"mix.mitrans", "true"}, {"mix.decouple_mode", "soft"}}},
  };
}

std::optional<RowSummary> AblationTable::summary(const std::string& row) const {
  RowSummary s;
  s.row = row;
  std::vector<double> vals, p0, p1;
  for (const auto& r : runs) {
    if (r.row != row || !r.val_miou) continue;
    vals.push_back(*r.val_miou);
    if (r.pseudo_initial) p0.push_back(*r.pseudo_initial);
    if (r.pseudo_final) p1.push_back(*r.pseudo_final);
  }
  if (vals.empty()) return std::nullopt;
  auto mean = [](const std::vector<double>& v) {
    double t = 0.0;
    for (double x : v) t += x;
    return v.empty() ? 0.0 : t / static_cast<double>(v.size());
  };
  s.completed = vals.size();
  s.mean = mean(vals);
  if (vals.size() > 1) {
    double ss = 0.0;
    for (double x : vals) ss += (x - s.mean) * (x - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(vals.size() - 1));
  }
  s.pseudo_initial = mean(p0);
  s.pseudo_final = mean(p1);
  return s;
}

std::string AblationTable::runs_csv() const {
  std::string out = "row,seed,val_miou,pseudo_initial,pseudo_final,error\n";
  for (const auto& r : runs) {
    out += csv_field(r.row) + "," + std::to_string(r.seed) + "," + num(r.val_miou) + "," + num(r.pseudo_initial) +
           "," + num(r.pseudo_final) + "," + csv_field(r.error) + "\n";
  }
  return out;
}

std::string AblationTable::summary_csv() const {
  std::string out = "row,runs,mean,std,pseudo_initial,pseudo_final\n";
  for (const auto& row : rows) {
    const auto s = summary(row);
    if (!s) {
      out += csv_field(row) + ",0,,,,\n";
      continue;
    }
    out += csv_field(row) + "," + std::to_string(s->completed) + "," + num(s->mean) + "," + num(s->stddev) + "," +
           num(s->pseudo_initial) + "," + num(s->pseudo_final) + "\n";
  }
  return out;
}

std::string AblationTable::pretty() const {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-14s %5s %18s %14s %14s\n", "row", "runs", "val mIoU (%)", "pseudo@0 (%)",
                "pseudo@end (%)");
  out << buf;
  for (const auto& row : rows) {
    const auto s = summary(row);
    if (!s) {
      std::snprintf(buf, sizeof buf, "%-14s %5d %18s %14s %14s\n", row.c_str(), 0, "failed", "-", "-");
    } else {
      char cell[40];
      std::snprintf(cell, sizeof cell, "%.2f +- %.2f", 100.0 * s->mean, 100.0 * s->stddev);
      std::snprintf(buf, sizeof buf, "%-14s %5zu %18s %14.2f %14.2f\n", row.c_str(), s->completed, cell,
                    100.0 * s->pseudo_initial, 100.0 * s->pseudo_final);
    }
    out << buf;
  }
  for (const auto& r : runs) {
    if (!r.error.empty()) out << "error in " << r.row << " seed " << r.seed << ": " << r.error << '\n';
  }
  return out.str();
}

bool AblationTable::complete() const {
  return std::all_of(runs.begin(), runs.end(), [](const AblationRun& r) { return r.error.empty() && r.val_miou; });
}

AblationTable run_ablation(const RunConfig& base, const DatasetManifest& manifest, const AblationOptions& options) {
  const TrainData data = load_train_data(manifest);
  // Scoring pseudo masks needs the quarantined unlabeled masks; training never sees them.
  const auto labeled_eval = load_split(manifest, Split::Labeled, true);
  const auto unlabeled_eval = load_split(manifest, Split::Unlabeled, true);

  AblationTable table;
  std::vector<Job> jobs;
  std::map<std::string, std::size_t> by_key;
  struct Slot {
    std::string row;
    std::uint64_t seed;
    std::size_t job;
  };
  std::vector<Slot> slots;
  for (const auto& row : ablation_rows()) {
    table.rows.push_back(row.name);
    for (std::size_t k = 0; k < base.ablate_seeds; ++k) {
      RunConfig cfg = base;
      apply_settings(cfg, row.overrides);
      cfg.train.seed = base.train.seed + k;
      cfg.validate();
      const std::string key = format_run_config(cfg);
      auto [it, inserted] = by_key.emplace(key, jobs.size());
      if (inserted) jobs.push_back({cfg, key, {row.name, cfg.train.seed, {}, {}, {}, {}}});
      slots.push_back({row.name, cfg.train.seed, it->second});
    }
  }

  std::mutex mutex;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      Job& job = jobs[j];
      AblationRun& r = job.result;
      try {
        const MixConfig& mix = job.config.train.mix;
        const std::uint64_t pseudo_seed = derive_seed(job.config.train.seed, kPseudoStream);
        SegModel init = initial_model(job.config.model, job.config.train);
        r.pseudo_initial =
            pseudo_mask_quality(model_mixed_predictor(init, mix), labeled_eval, unlabeled_eval, mix, pseudo_seed);
        RunOutputs outputs;
        if (options.out_dir) {
          std::string stem;
          for (char c : r.row) stem += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
          outputs.metrics_csv = *options.out_dir / "runs" / (stem + "_seed" + std::to_string(r.seed) + ".csv");
        }
        TrainResult trained = run_training(job.config.model, job.config.train, data, outputs);
        r.val_miou = trained.final_val_miou;
        r.pseudo_final = pseudo_mask_quality(model_mixed_predictor(trained.model, mix), labeled_eval, unlabeled_eval,
                                             mix, pseudo_seed);
      } catch (const std::exception& e) {
        r.error = e.what();
      }
      if (options.on_run) {
        std::lock_guard lock(mutex);
        options.on_run(r);
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, std::max<std::size_t>(jobs.size(), 1));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  for (const auto& s : slots) {
    AblationRun r = jobs[s.job].result;
    r.row = s.row;
    table.runs.push_back(std::move(r));
  }
  return table;
}

}  // namespace gmx
