#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "u2pl/config.hpp"
#include "u2pl/datagen.hpp"

namespace u2pl {

/// Desk-scale synthetic benchmark for a regime (64×64, C=6, 1/4 labeled).
DatasetSpec benchmark_dataset(Regime regime, std::uint64_t seed);

/// Run configuration used for the desk-scale comparisons.
RunConfig benchmark_config(Regime regime, std::uint64_t seed);

struct ArmResult {
  std::string name;
  double final_miou = 0.0;
};

/// Trains the unreliable-negatives, reliable-negatives and supervised-only
/// arms on one dataset and reports each arm's final val mIoU.
std::vector<ArmResult> reliability_ablation(const RunConfig& base, const Dataset& ds,
                                            const std::filesystem::path& out_dir);

/// Trains the full method and the source-only baseline on one DA dataset.
std::vector<ArmResult> domain_adaptation_comparison(const RunConfig& base, const Dataset& ds,
                                                    const std::filesystem::path& out_dir);

/// mIoU of predicting background everywhere on the given scenes.
double all_background_miou(const Dataset& ds, const std::vector<int>& ids);

}  // namespace u2pl
