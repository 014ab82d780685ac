// SPDX-License-Identifier: Apache-2.0
//
// Evaluation metrics. Everything is a pure function of the confusion matrix
// (rows = true class, columns = predicted class).

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"

#include "tmdc/modality.hpp"

namespace tmdc {

struct MetricReport {
  double acc = 0.0;  // binary tasks
  double f1 = 0.0;   // binary tasks, positive class = 1
  double wa = 0.0;   // overall accuracy
  double ua = 0.0;   // macro-averaged recall
  std::vector<double> recalls;
  std::vector<std::vector<std::size_t>> confusion;
  std::size_t n_eval = 0;
  std::size_t n_excluded = 0;  // regression samples with a zero score
  bool binary = true;

  /// Headline figure: ACC for binary tasks, WA otherwise.
  double primary() const { return binary ? acc : wa; }
};

inline MetricReport metrics_from_confusion(const std::vector<std::vector<std::size_t>>& confusion, bool binary) {
  const std::size_t C = confusion.size();
  if (C == 0) throw ProtocolError("metrics: empty confusion matrix");
  if (binary && C != 2) throw ProtocolError("metrics: binary report needs a 2x2 confusion matrix");
  MetricReport r;
  r.binary = binary;
  r.confusion = confusion;
  std::size_t total = 0, correct = 0;
  double recall_sum = 0.0;
  for (std::size_t i = 0; i < C; ++i) {
    if (confusion[i].size() != C) throw ProtocolError("metrics: confusion matrix is not square");
    std::size_t support = 0;
    for (std::size_t j = 0; j < C; ++j) support += confusion[i][j];
    total += support;
    correct += confusion[i][i];
    const double rec = support ? static_cast<double>(confusion[i][i]) / static_cast<double>(support) : 0.0;
    r.recalls.push_back(rec);
    recall_sum += rec;
  }
  if (total == 0) throw ProtocolError("metrics: empty evaluation set");
  r.n_eval = total;
  r.wa = static_cast<double>(correct) / static_cast<double>(total);
  r.ua = recall_sum / static_cast<double>(C);
  if (binary) {
    r.acc = r.wa;
    const double tp = static_cast<double>(confusion[1][1]);
    const double fp = static_cast<double>(confusion[0][1]);
    const double fn = static_cast<double>(confusion[1][0]);
    const double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    r.f1 = precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  return r;
}

/// Builds the report from raw predictions. Regression scores are converted
/// to negative (< 0) / positive (> 0) labels; samples whose true score is
/// exactly zero are excluded. Classification predictions are class indices.
inline MetricReport compute_metrics(const std::vector<double>& predictions, const std::vector<double>& labels,
                                    TaskKind task, std::size_t num_classes) {
  if (predictions.size() != labels.size()) throw ProtocolError("metrics: prediction/label count mismatch");
  if (labels.empty()) throw ProtocolError("metrics: empty evaluation set");
  const bool binary = task == TaskKind::Regression || num_classes == 2;
  const std::size_t C = task == TaskKind::Regression ? 2 : num_classes;
  std::vector<std::vector<std::size_t>> confusion(C, std::vector<std::size_t>(C, 0));
  std::size_t excluded = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::size_t truth, pred;
    if (task == TaskKind::Regression) {
      if (labels[i] == 0.0) {
        ++excluded;
        continue;
      }
      truth = labels[i] > 0 ? 1 : 0;
      pred = predictions[i] > 0 ? 1 : 0;
    } else {
      truth = static_cast<std::size_t>(labels[i]);
      pred = static_cast<std::size_t>(predictions[i]);
    }
    ++confusion.at(truth).at(pred);
  }
  MetricReport r = metrics_from_confusion(confusion, binary);
  r.n_excluded = excluded;
  return r;
}

inline nlohmann::ordered_json to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  if (r.binary) {
    j["acc"] = r.acc;
    j["f1"] = r.f1;
  }
  j["wa"] = r.wa;
  j["ua"] = r.ua;
  j["recalls"] = r.recalls;
  j["confusion"] = r.confusion;
  j["n_eval"] = r.n_eval;
  j["n_excluded"] = r.n_excluded;
  return j;
}

}  // namespace tmdc
