#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "sldb/train/train.hpp"

namespace sldb {

struct SweepRow {
  std::size_t patch_size = 0;
  double ratio = 0;
  double accuracy = 0;      // held-out accuracy; NaN when the cell failed
  double wall_seconds = 0;
  std::string status = "ok";
};

struct SweepOptions {
  std::vector<std::size_t> patch_sizes{16, 32, 64};
  std::vector<double> ratios{0.4, 0.5, 0.6};
  std::size_t pretrain_epochs = 0;  // 0: fine-tune from scratch
  bool quiet = true;
};

/// One fine-tuning run per (patch size, ratio) cell, patch size outermost.
/// Each cell masks fine-tuning inputs with its own spec and, when
/// pretrain_epochs > 0, first pretrains with the same spec. A failing cell is
/// recorded with its message and the sweep moves on.
std::vector<SweepRow> run_mask_sweep(const RunConfig& base, const DatasetIndex& train, const DatasetIndex& test,
                                     const std::filesystem::path& out_dir, const SweepOptions& options);

/// The config a cell runs with.
RunConfig sweep_cell_config(const RunConfig& base, std::size_t patch_size, double ratio);

/// "patch_size<TAB>mask_ratio<TAB>accuracy<TAB>wall_seconds<TAB>status" with a header row.
std::string format_sweep_table(const std::vector<SweepRow>& rows);
std::vector<SweepRow> parse_sweep_table(const std::string& text);

}  // namespace sldb
