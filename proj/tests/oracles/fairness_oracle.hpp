#pragma once

// Brute-force counting for the fairness metrics.

#include <optional>
#include <vector>

namespace oracle {

struct Counts {
  // n[g][y_hat][y]
  double n[2][2][2] = {};
};

inline Counts Count(const std::vector<int>& pred, const std::vector<int>& label, const std::vector<int>& group) {
  Counts c;
  for (std::size_t i = 0; i < pred.size(); ++i) c.n[group[i]][pred[i]][label[i]] += 1;
  return c;
}

inline std::optional<double> BruteDir(const std::vector<int>& pred, const std::vector<int>& group) {
  double pos[2] = {0, 0}, tot[2] = {0, 0};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    tot[group[i]] += 1;
    pos[group[i]] += pred[i];
  }
  if (tot[0] == 0 || tot[1] == 0 || pos[1] == 0) return std::nullopt;
  return (pos[0] / tot[0]) / (pos[1] / tot[1]);
}

struct BruteDiffs {
  double fn, fp;
};

// Unprivileged (0) minus privileged (1).
inline std::optional<BruteDiffs> BruteOdds(const std::vector<int>& pred, const std::vector<int>& label,
                                           const std::vector<int>& group) {
  double fnr[2], fpr[2];
  for (int g = 0; g < 2; ++g) {
    double fn = 0, tp = 0, fp = 0, tn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (group[i] != g) continue;
      if (label[i] == 1 && pred[i] == 0) fn++;
      if (label[i] == 1 && pred[i] == 1) tp++;
      if (label[i] == 0 && pred[i] == 1) fp++;
      if (label[i] == 0 && pred[i] == 0) tn++;
    }
    if (fn + tp == 0 || fp + tn == 0) return std::nullopt;
    fnr[g] = fn / (fn + tp);
    fpr[g] = fp / (fp + tn);
  }
  return BruteDiffs{fnr[0] - fnr[1], fpr[0] - fpr[1]};
}

}  // namespace oracle
