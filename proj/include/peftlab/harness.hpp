// SPDX-License-Identifier: Apache-2.0
//
// Experiment harness: random hyperparameter search with seed replication,
// prefix-length sweeps, and table/plot emission.
//
// The harness never trains anything itself — callers hand it a runner
// closure per (trial, seed) or (length, variant, seed) unit, and it handles
// scheduling, divergence bookkeeping, winner selection, and aggregation.
// Every emission function is a pure string builder, so archived run records
// regenerate their tables byte for byte.

#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "peftlab/model.hpp"
#include "peftlab/tuning.hpp"

namespace peftlab {

struct HarnessError : std::runtime_error {
    explicit HarnessError(const std::string & msg) : std::runtime_error(msg) {}
};

// One point of the hyperparameter space. Strategies without a prefix leave
// the prefix dimensions at -1.
struct Trial {
    double lr            = 0;
    int    batch_size    = 0;
    int    prefix_length = -1;
    int    mid_dim       = -1;
};

bool operator==(const Trial & a, const Trial & b);

// The published search draws, frozen verbatim so experiments line up
// run-for-run with the reference results: 16 trials each.
std::vector<Trial> prefix_trial_table();
std::vector<Trial> generic_trial_table();

// Fixed-length mode: every trial keeps its other dimensions and takes the
// given prefix length. Length 0 degenerates to a pure evaluation run.
void overwrite_prefix_length(std::vector<Trial> & trials, int length);

// Fresh-draw alternative to the frozen tables. lr is log-uniform between
// the bounds; the rest come from the listed inventories. Draw order per
// trial is lr, batch, length, mid, so adding prefix dimensions does not
// reshuffle the shared ones.
struct SearchSpace {
    bool             prefix_dims = false;  // also draw prefix_length / mid_dim
    double           lr_min      = 5e-6;
    double           lr_max      = 5e-4;
    std::vector<int> batch_sizes{ 4, 8, 16 };
    std::vector<int> lengths{ 20, 30, 50, 100 };
    std::vector<int> mid_dims{ 300, 600, 800 };
    int              trials      = 16;
    uint64_t         master_seed = 0;

    void validate() const;
};

std::vector<Trial> sample_trials(const SearchSpace & space);

// Outcome of one (trial, seed) run. Diverged runs keep -1 metrics.
struct RunRecord {
    int         trial_index  = -1;
    Trial       trial;
    uint64_t    seed         = 0;
    double      val_em       = -1;
    double      test_em      = -1;
    int64_t     budget       = 0;  // trainable parameters during the run
    double      wall_seconds = 0;
    std::string log_path;
    bool        diverged     = false;
};

bool operator==(const RunRecord & a, const RunRecord & b);

// JSONL archive: one record per line, keys sorted, doubles round-trip
// exactly. Malformed lines raise HarnessError naming the line.
std::string            record_to_json(const RunRecord & r);
RunRecord              record_from_json(const std::string & line);
std::string            records_to_jsonl(const std::vector<RunRecord> & records);
std::vector<RunRecord> records_from_jsonl(const std::string & text);

// What a runner reports back for a finished run; wall time is measured by
// the harness around the call. A runner signals divergence by throwing
// TrainingError.
struct RunOutcome {
    double      val_em  = 0;
    double      test_em = 0;
    int64_t     budget  = 0;
    std::string log_path;
};

using TrialRunner = std::function<RunOutcome(const Trial & trial, uint64_t seed)>;

struct SearchResult {
    std::vector<RunRecord> records;  // trial-major, seeds in the given order
    int                    winner         = -1;
    double                 winner_val_em  = 0;  // mean over the winner's seeds
    double                 winner_test_em = 0;
};

// Runs every trial over every seed, marks divergent runs, disqualifies any
// trial with a diverged seed, and selects the best mean validation EM (ties
// fall to the earlier trial). Throws when every trial diverged.
SearchResult random_search(const std::vector<Trial> & trials, const std::vector<uint64_t> & seeds,
                           const TrialRunner & run);

// Re-runs the winner selection on archived records (grouped by trial index),
// so a table or summary regenerated from a record file matches the original
// run exactly. Throws when the records are empty or every trial diverged.
SearchResult summarize_records(const std::vector<RunRecord> & records);

// One aggregated sweep point: test EM over seeds at one prefix length, with
// or without special-token embeddings. stddev is the population form.
struct SweepPoint {
    int                 length  = 0;
    bool                special = false;
    std::vector<double> em;  // one entry per seed
    double              mean   = 0;
    double              stddev = 0;
};

using SweepRunner = std::function<double(int length, bool special, uint64_t seed)>;

// Both variants at every length; points come back length-major with the
// plain variant first. Runner errors propagate — a sweep has no notion of
// a disqualified point.
std::vector<SweepPoint> sweep_prefix_length(const std::vector<int> & lengths, const std::vector<uint64_t> & seeds,
                                            const SweepRunner & run);

// Deterministic emission.
std::string search_table_tsv(const std::vector<RunRecord> & records);
std::string sweep_table_tsv(const std::vector<SweepPoint> & points);
std::string sweep_plot_svg(const std::vector<SweepPoint> & points);
std::string sweep_plot_ascii(const std::vector<SweepPoint> & points, int width = 64, int height = 16);

// Budget rows for named strategies: closed-form count, stored count,
// train-time count, and percent of the full model.
std::string budget_table_text(const ModelConfig & cfg,
                              const std::vector<std::pair<std::string, TuningStrategy>> & strategies,
                              int special_rows);

// Parallel worker slots from PEFTLAB_WORKERS; anything unparsable or < 1
// falls back to 1.
int worker_slots();

namespace detail {

// Runs fn(0..n-1) across up to `workers` threads. Each index owns its own
// output slot, so results never depend on scheduling; the first exception
// wins and is rethrown after all threads join.
void run_units(int64_t n, int workers, const std::function<void(int64_t)> & fn);

std::string format_count(int64_t n);  // 2211840 -> "2,211,840"

}  // namespace detail

}  // namespace peftlab
