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

#ifndef JMSI_EVALUATION_H_
#define JMSI_EVALUATION_H_

#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "jmsi/model.h"
#include "jmsi/packing.h"
#include "jmsi/sampler.h"
#include "json.hpp"

namespace jmsi {

// Candidates of one bundle by descending score; equal scores keep ascending
// candidate index. scores[r] belongs to order[r].
struct RankingResult {
  std::string bundle_id;
  std::vector<int> order;
  std::vector<double> scores;
  // Leading entries of `order` that the joint model scored. Equals the
  // candidate count except for cascade results, whose tail keeps the
  // upstream order and carries -inf scores.
  int reranked = 0;
};

RankingResult rank_by_scores(const std::string& bundle_id,
                             std::span<const double> scores);

// Per-candidate joint-model scores for a bundle (class-0 logits of an IEk or
// AEk head), padding slots excluded.
std::vector<double> score_bundle(const Model<float>& model, HeadKind kind,
                                 const CandidateBundle& bundle,
                                 const PackConfig& cfg, const Vocab& vocab);

RankingResult rank_bundle(const Model<float>& model, HeadKind kind,
                          const CandidateBundle& bundle, const PackConfig& cfg,
                          const Vocab& vocab);

// Arg-max class of an IE1 or AE1 head.
int predict_class(const Model<float>& model, HeadKind kind,
                  const CandidateBundle& bundle, const PackConfig& cfg,
                  const Vocab& vocab);

struct EvalReport {
  double p_at_1 = 0.0;
  double map = 0.0;
  double mrr = 0.0;
  std::size_t n_queries = 0;
  std::optional<double> label_accuracy;
};

using GradedRanking = std::pair<RankingResult, std::vector<int>>;

// P@1, MAP and MRR over queries with at least one positive; gold[i] is the
// label of candidate i. Throws a data error when no query qualifies.
EvalReport compute_ranking_metrics(const std::vector<GradedRanking>& results);

double label_accuracy(std::span<const int> predictions,
                      std::span<const int> golds);

struct TTestResult {
  double mean_difference = 0.0;
  double t_statistic = 0.0;
  int dof = 0;
  double critical_value = 0.0;
  bool significant_at_95 = false;
  // All differences identical to zero: t is undefined.
  bool degenerate = false;
  std::string note;
};

// Two-sided 95% critical value of Student's t.
double t_critical_95(int dof);

// Paired two-sided t-test on a - b.
TTestResult paired_t_test(std::span<const double> runs_a,
                          std::span<const double> runs_b);

using JointScorer = std::function<std::vector<double>(const CandidateBundle&)>;

// Keeps the top-k candidates by external score (stable ties), re-scores them
// with the joint scorer fed in original candidate order, and appends the rest
// in external order.
RankingResult cascade_rerank(std::span<const double> external_scores,
                             const JointScorer& joint, int k,
                             const CandidateBundle& bundle);

RankingResult cascade_rerank(std::span<const double> external_scores,
                             const Model<float>& model, HeadKind kind, int k,
                             const CandidateBundle& bundle,
                             const PackConfig& cfg, const Vocab& vocab);

struct CostReport {
  int k = 0;
  // Joint over pairwise time when attention dominates: (k+1)^2 / (4k).
  double quadratic_ratio = 0.0;
  // Joint over pairwise time when linear layers dominate: (k+1) / (2k).
  double linear_ratio = 0.0;
};

CostReport latency_ratio(int k);

nlohmann::ordered_json to_json(const EvalReport& report);
nlohmann::ordered_json to_json(const TTestResult& result);
nlohmann::ordered_json to_json(const CostReport& report);
std::string format_report_table(const EvalReport& report);

// Score files: TSV rows "bundle_id<TAB>candidate_index<TAB>score".
using ScoreTable = std::map<std::string, std::vector<double>>;
ScoreTable read_score_tsv(std::istream& in);
void write_score_tsv(const ScoreTable& scores, std::ostream& out);

}  // namespace jmsi

#endif  // JMSI_EVALUATION_H_
