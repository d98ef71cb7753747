/*
 * Copyright 2026 The JMSI Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "jmsi/evaluation.h"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "jmsi/error.h"

namespace jmsi {
namespace {

std::vector<int> stable_descending(std::span<const double> scores) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] > scores[b]; });
  return order;
}

ForwardOutput<float> forward_bundle(const Model<float>& model,
                                    const CandidateBundle& bundle,
                                    const PackConfig& cfg, const Vocab& vocab) {
  if (model.config().type_vocab < cfg.slots() ||
      model.config().max_positions < cfg.total_len()) {
    usage_error("model cannot encode inputs of " + std::to_string(cfg.slots()) +
                " slots of length " + std::to_string(cfg.L));
  }
  const PackedInput packed = pack_bundle(bundle, vocab, cfg);
  const PackedBatch batch = collate(std::span<const PackedInput>(&packed, 1));
  ForwardOptions options;
  options.logits = LogitMode::kNone;
  return forward(model, batch, options);
}

}  // namespace

RankingResult rank_by_scores(const std::string& bundle_id,
                             std::span<const double> scores) {
  RankingResult result;
  result.bundle_id = bundle_id;
  result.order = stable_descending(scores);
  for (const int i : result.order) result.scores.push_back(scores[i]);
  result.reranked = static_cast<int>(scores.size());
  return result;
}

std::vector<double> score_bundle(const Model<float>& model, HeadKind kind,
                                 const CandidateBundle& bundle,
                                 const PackConfig& cfg, const Vocab& vocab) {
  if (!is_per_candidate(kind)) {
    usage_error("ranking needs a per-candidate head (IEk or AEk)");
  }
  const auto out = forward_bundle(model, bundle, cfg, vocab);
  const auto logits = apply_head(model, kind, out);
  std::vector<double> scores;
  for (std::size_t i = 0; i < bundle.candidates.size(); ++i) {
    scores.push_back(logits.rows[0](static_cast<Eigen::Index>(i), 0));
  }
  return scores;
}

RankingResult rank_bundle(const Model<float>& model, HeadKind kind,
                          const CandidateBundle& bundle, const PackConfig& cfg,
                          const Vocab& vocab) {
  const auto scores = score_bundle(model, kind, bundle, cfg, vocab);
  return rank_by_scores(bundle.bundle_id, scores);
}

int predict_class(const Model<float>& model, HeadKind kind,
                  const CandidateBundle& bundle, const PackConfig& cfg,
                  const Vocab& vocab) {
  if (is_per_candidate(kind)) {
    usage_error("classification needs a single-output head (IE1 or AE1)");
  }
  const auto out = forward_bundle(model, bundle, cfg, vocab);
  const auto logits = apply_head(model, kind, out);
  Eigen::Index best = 0;
  logits.rows[0].row(0).maxCoeff(&best);
  return static_cast<int>(best);
}

EvalReport compute_ranking_metrics(const std::vector<GradedRanking>& results) {
  EvalReport report;
  double sum_p1 = 0.0, sum_ap = 0.0, sum_rr = 0.0;
  for (const auto& [ranking, gold] : results) {
    if (ranking.order.size() != gold.size()) {
      data_error("bundle " + ranking.bundle_id +
                 ": ranking and gold labels differ in length");
    }
    if (std::none_of(gold.begin(), gold.end(), [](int g) { return g > 0; })) {
      continue;
    }
    int hits = 0;
    double precision_sum = 0.0;
    double rr = 0.0;
    for (std::size_t r = 0; r < ranking.order.size(); ++r) {
      if (gold[ranking.order[r]] <= 0) continue;
      ++hits;
      precision_sum += static_cast<double>(hits) / static_cast<double>(r + 1);
      if (hits == 1) rr = 1.0 / static_cast<double>(r + 1);
    }
    sum_p1 += gold[ranking.order[0]] > 0 ? 1.0 : 0.0;
    sum_ap += precision_sum / hits;
    sum_rr += rr;
    ++report.n_queries;
  }
  if (report.n_queries == 0) {
    data_error("no query with a positive candidate to evaluate");
  }
  const double n = static_cast<double>(report.n_queries);
  report.p_at_1 = sum_p1 / n;
  report.map = sum_ap / n;
  report.mrr = sum_rr / n;
  return report;
}

double label_accuracy(std::span<const int> predictions,
                      std::span<const int> golds) {
  if (predictions.size() != golds.size()) {
    data_error("label_accuracy: " + std::to_string(predictions.size()) +
               " predictions vs " + std::to_string(golds.size()) + " labels");
  }
  if (golds.empty()) data_error("label_accuracy: no labels");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) correct += predictions[i] == golds[i];
  return static_cast<double>(correct) / static_cast<double>(golds.size());
}

double t_critical_95(int dof) {
  static constexpr double kTable[30] = {
      12.7062, 4.3027, 3.1824, 2.7764, 2.5706, 2.4469, 2.3646, 2.3060,
      2.2622,  2.2281, 2.2010, 2.1788, 2.1604, 2.1448, 2.1314, 2.1199,
      2.1098,  2.1009, 2.0930, 2.0860, 2.0796, 2.0739, 2.0687, 2.0639,
      2.0595,  2.0555, 2.0518, 2.0484, 2.0452, 2.0423};
  if (dof < 1) usage_error("t distribution needs dof >= 1");
  if (dof <= 30) return kTable[dof - 1];
  // Cornish-Fisher expansion around the normal quantile.
  const double z = 1.959963984540054;
  const double v = dof;
  const double z3 = z * z * z, z5 = z3 * z * z, z7 = z5 * z * z;
  return z + (z3 + z) / (4 * v) + (5 * z5 + 16 * z3 + 3 * z) / (96 * v * v) +
         (3 * z7 + 19 * z5 + 17 * z3 - 15 * z) / (384 * v * v * v);
}

TTestResult paired_t_test(std::span<const double> runs_a,
                          std::span<const double> runs_b) {
  if (runs_a.size() != runs_b.size()) {
    usage_error("paired t-test needs equal-length samples");
  }
  const std::size_t n = runs_a.size();
  if (n < 2) usage_error("paired t-test needs at least 2 paired samples");
  std::vector<double> diff(n);
  for (std::size_t i = 0; i < n; ++i) diff[i] = runs_a[i] - runs_b[i];
  const double mean = std::accumulate(diff.begin(), diff.end(), 0.0) / n;
  double ss = 0.0;
  for (double d : diff) ss += (d - mean) * (d - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));

  TTestResult result;
  result.mean_difference = mean;
  result.dof = static_cast<int>(n - 1);
  result.critical_value = t_critical_95(result.dof);
  if (sd == 0.0) {
    if (mean == 0.0) {
      result.degenerate = true;
      result.t_statistic = std::numeric_limits<double>::quiet_NaN();
      result.note = "degenerate: identical samples";
      return result;
    }
    result.t_statistic = std::copysign(std::numeric_limits<double>::infinity(), mean);
    result.significant_at_95 = true;
    result.note = "zero variance with nonzero mean difference";
    return result;
  }
  result.t_statistic = mean / (sd / std::sqrt(static_cast<double>(n)));
  result.significant_at_95 = std::abs(result.t_statistic) > result.critical_value;
  return result;
}

RankingResult cascade_rerank(std::span<const double> external_scores,
                             const JointScorer& joint, int k,
                             const CandidateBundle& bundle) {
  const std::size_t n = bundle.candidates.size();
  if (n == 0) data_error("cascade_rerank: empty bundle " + bundle.bundle_id);
  if (external_scores.size() != n) {
    data_error("cascade_rerank: bundle " + bundle.bundle_id + " has " +
               std::to_string(n) + " candidates but " +
               std::to_string(external_scores.size()) + " external scores");
  }
  if (k < 1) usage_error("cascade_rerank: k must be >= 1");
  const std::vector<int> external = stable_descending(external_scores);
  const std::size_t top = std::min<std::size_t>(n, k);

  std::vector<int> selected(external.begin(), external.begin() + top);
  std::sort(selected.begin(), selected.end());
  CandidateBundle sub;
  sub.bundle_id = bundle.bundle_id;
  sub.query = bundle.query;
  sub.label = bundle.label;
  for (const int i : selected) {
    sub.candidates.push_back(bundle.candidates[i]);
    if (i < static_cast<int>(bundle.gold.size())) sub.gold.push_back(bundle.gold[i]);
  }
  const std::vector<double> joint_scores = joint(sub);
  if (joint_scores.size() != top) {
    data_error("cascade_rerank: joint scorer returned " +
               std::to_string(joint_scores.size()) + " scores for " +
               std::to_string(top) + " candidates");
  }

  RankingResult result;
  result.bundle_id = bundle.bundle_id;
  for (const int local : stable_descending(joint_scores)) {
    result.order.push_back(selected[local]);
    result.scores.push_back(joint_scores[local]);
  }
  for (std::size_t r = top; r < n; ++r) {
    result.order.push_back(external[r]);
    result.scores.push_back(-std::numeric_limits<double>::infinity());
  }
  result.reranked = static_cast<int>(top);
  return result;
}

RankingResult cascade_rerank(std::span<const double> external_scores,
                             const Model<float>& model, HeadKind kind, int k,
                             const CandidateBundle& bundle,
                             const PackConfig& cfg, const Vocab& vocab) {
  return cascade_rerank(
      external_scores,
      [&](const CandidateBundle& sub) {
        return score_bundle(model, kind, sub, cfg, vocab);
      },
      k, bundle);
}

CostReport latency_ratio(int k) {
  if (k < 1) usage_error("latency_ratio needs k >= 1");
  CostReport report;
  report.k = k;
  const double kk = k;
  report.quadratic_ratio = (kk + 1) * (kk + 1) / (4 * kk);
  report.linear_ratio = (kk + 1) / (2 * kk);
  return report;
}

nlohmann::ordered_json to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["p_at_1"] = report.p_at_1;
  j["map"] = report.map;
  j["mrr"] = report.mrr;
  j["n_queries"] = report.n_queries;
  if (report.label_accuracy) j["label_accuracy"] = *report.label_accuracy;
  return j;
}

nlohmann::ordered_json to_json(const TTestResult& result) {
  nlohmann::ordered_json j;
  j["mean_difference"] = result.mean_difference;
  if (std::isfinite(result.t_statistic)) {
    j["t_statistic"] = result.t_statistic;
  } else if (std::isnan(result.t_statistic)) {
    j["t_statistic"] = nullptr;
  } else {
    j["t_statistic"] = result.t_statistic > 0 ? "inf" : "-inf";
  }
  j["dof"] = result.dof;
  j["critical_value"] = result.critical_value;
  j["significant_at_95"] = result.significant_at_95;
  j["degenerate"] = result.degenerate;
  if (!result.note.empty()) j["note"] = result.note;
  return j;
}

nlohmann::ordered_json to_json(const CostReport& report) {
  nlohmann::ordered_json j;
  j["k"] = report.k;
  j["quadratic_ratio"] = report.quadratic_ratio;
  j["linear_ratio"] = report.linear_ratio;
  return j;
}

std::string format_report_table(const EvalReport& report) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  auto row = [&](const std::string& name, double value) {
    out << std::left << std::setw(16) << name << std::right << std::setw(10)
        << value << '\n';
  };
  out << std::left << std::setw(16) << "queries" << std::right << std::setw(10)
      << report.n_queries << '\n';
  row("P@1", report.p_at_1);
  row("MAP", report.map);
  row("MRR", report.mrr);
  if (report.label_accuracy) row("label accuracy", *report.label_accuracy);
  return out.str();
}

ScoreTable read_score_tsv(std::istream& in) {
  ScoreTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string id, index_text, score_text;
    if (!std::getline(fields, id, '\t') || !std::getline(fields, index_text, '\t') ||
        !std::getline(fields, score_text)) {
      data_error("malformed score row at line " + std::to_string(line_no));
    }
    if (line_no == 1 && index_text == "candidate_index") continue;
    try {
      const int index = std::stoi(index_text);
      const double score = std::stod(score_text);
      auto& scores = table[id];
      if (index != static_cast<int>(scores.size())) {
        data_error("score rows of bundle " + id +
                   " must list candidate indices 0.. in order (line " +
                   std::to_string(line_no) + ")");
      }
      scores.push_back(score);
    } catch (const std::logic_error&) {
      data_error("malformed score row at line " + std::to_string(line_no));
    }
  }
  return table;
}

void write_score_tsv(const ScoreTable& scores, std::ostream& out) {
  out << "bundle_id\tcandidate_index\tscore\n";
  out << std::setprecision(9);
  for (const auto& [id, values] : scores) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      out << id << '\t' << i << '\t' << values[i] << '\n';
    }
  }
}

}  // namespace jmsi
