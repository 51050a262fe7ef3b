// SPDX-License-Identifier: Apache-2.0
//
// Search and sweep orchestration: frozen trial tables against an independent
// transcription, mean-based winner selection with divergence bookkeeping,
// JSONL record round-trips with byte-identical table regeneration, sweep
// aggregation against hand-computed statistics, and the worker pool.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <set>

#include "peftlab/harness.hpp"
#include "peftlab/training.hpp"

using namespace peftlab;

namespace {

// Independent transcription of the published draws, kept separate from the
// library tables on purpose.
struct PrefixRow {
    double lr;
    int    bsz, len, mid;
};
const PrefixRow kPrefixRows[16] = {
    { 3.19e-05, 16, 50, 800 }, { 1.13e-04, 4, 50, 300 },   { 3.00e-04, 8, 100, 800 }, { 4.62e-05, 16, 30, 600 },
    { 4.27e-04, 4, 50, 300 },  { 1.79e-05, 16, 30, 300 },  { 5.89e-05, 4, 50, 800 },  { 3.88e-05, 16, 20, 600 },
    { 5.93e-06, 16, 30, 300 }, { 6.23e-05, 16, 100, 300 }, { 5.81e-06, 8, 100, 600 }, { 1.25e-04, 4, 50, 800 },
    { 2.64e-05, 16, 20, 600 }, { 3.98e-05, 4, 20, 300 },   { 1.25e-05, 4, 100, 800 }, { 3.70e-05, 16, 20, 300 },
};

struct GenericRow {
    double lr;
    int    bsz;
};
const GenericRow kGenericRows[16] = {
    { 1.61e-04, 4 },  { 7.34e-05, 16 }, { 2.52e-04, 4 }, { 1.22e-04, 4 }, { 1.49e-05, 8 },  { 3.69e-04, 8 },
    { 5.82e-05, 4 },  { 1.50e-05, 8 },  { 4.07e-05, 16 }, { 1.40e-05, 16 }, { 5.40e-06, 16 }, { 1.50e-05, 8 },
    { 9.82e-05, 4 },  { 7.07e-05, 4 },  { 1.42e-04, 8 }, { 4.38e-05, 4 },
};

// Deterministic fake runner: EM is a pure function of the trial index and
// seed, so searches are reproducible across worker counts.
RunOutcome fake_outcome(int trial_index, uint64_t seed) {
    RunOutcome o;
    o.val_em   = 0.5 + 0.01 * trial_index + 0.001 * (double) seed;
    o.test_em  = o.val_em - 0.05;
    o.budget   = 1000 + trial_index;
    o.log_path = "runs/t" + std::to_string(trial_index) + "_s" + std::to_string(seed) + ".log";
    return o;
}

TrialRunner runner_with_divergence(const std::set<std::pair<int, uint64_t>> & divergent,
                                   const std::vector<Trial> &                 trials) {
    return [divergent, &trials](const Trial & t, uint64_t seed) -> RunOutcome {
        int index = -1;
        for (size_t i = 0; i < trials.size(); ++i) {
            if (trials[i] == t) index = (int) i;
        }
        REQUIRE(index >= 0);
        if (divergent.count({ index, seed })) throw TrainingError("non-finite loss at epoch 1");
        return fake_outcome(index, seed);
    };
}

}  // namespace

TEST_CASE("published trial tables are reproduced verbatim") {
    auto prefix = prefix_trial_table();
    REQUIRE(prefix.size() == 16);
    for (int i = 0; i < 16; ++i) {
        CAPTURE(i);
        CHECK(prefix[(size_t) i].lr == kPrefixRows[i].lr);
        CHECK(prefix[(size_t) i].batch_size == kPrefixRows[i].bsz);
        CHECK(prefix[(size_t) i].prefix_length == kPrefixRows[i].len);
        CHECK(prefix[(size_t) i].mid_dim == kPrefixRows[i].mid);
    }

    auto generic = generic_trial_table();
    REQUIRE(generic.size() == 16);
    for (int i = 0; i < 16; ++i) {
        CAPTURE(i);
        CHECK(generic[(size_t) i].lr == kGenericRows[i].lr);
        CHECK(generic[(size_t) i].batch_size == kGenericRows[i].bsz);
        CHECK(generic[(size_t) i].prefix_length == -1);  // not a tuned dimension
        CHECK(generic[(size_t) i].mid_dim == -1);
    }

    // value inventories match the published ranges
    for (const Trial & t : prefix) {
        CHECK(t.lr >= 5e-6);
        CHECK(t.lr <= 5e-4);
        CHECK((t.batch_size == 4 || t.batch_size == 8 || t.batch_size == 16));
        CHECK((t.prefix_length == 20 || t.prefix_length == 30 || t.prefix_length == 50 || t.prefix_length == 100));
        CHECK((t.mid_dim == 300 || t.mid_dim == 600 || t.mid_dim == 800));
    }
}

TEST_CASE("fixed-length mode overwrites only the prefix length") {
    auto trials = prefix_trial_table();
    auto before = trials;
    overwrite_prefix_length(trials, 5);
    REQUIRE(trials.size() == before.size());
    for (size_t i = 0; i < trials.size(); ++i) {
        CHECK(trials[i].prefix_length == 5);
        CHECK(trials[i].lr == before[i].lr);
        CHECK(trials[i].batch_size == before[i].batch_size);
        CHECK(trials[i].mid_dim == before[i].mid_dim);
    }
    overwrite_prefix_length(trials, 0);  // the degenerate sweep point is legal
    for (const Trial & t : trials) CHECK(t.prefix_length == 0);
    CHECK_THROWS_AS(overwrite_prefix_length(trials, -3), HarnessError);
}

TEST_CASE("sampled trials stay inside the space and replay from the seed") {
    SearchSpace sp;
    sp.prefix_dims = true;
    sp.master_seed = 11;
    auto trials    = sample_trials(sp);
    REQUIRE((int) trials.size() == sp.trials);
    for (const Trial & t : trials) {
        CHECK(t.lr >= sp.lr_min);
        CHECK(t.lr <= sp.lr_max);
        CHECK((t.batch_size == 4 || t.batch_size == 8 || t.batch_size == 16));
        CHECK((t.prefix_length == 20 || t.prefix_length == 30 || t.prefix_length == 50 || t.prefix_length == 100));
        CHECK((t.mid_dim == 300 || t.mid_dim == 600 || t.mid_dim == 800));
    }
    auto again = sample_trials(sp);
    CHECK(trials == again);

    SearchSpace other = sp;
    other.master_seed = 12;
    CHECK_FALSE(sample_trials(other) == trials);

    SearchSpace generic;
    generic.master_seed = 11;
    for (const Trial & t : sample_trials(generic)) {
        CHECK(t.prefix_length == -1);
        CHECK(t.mid_dim == -1);
    }

    SearchSpace bad;
    bad.lr_min = 0;
    CHECK_THROWS_AS(sample_trials(bad), HarnessError);
    bad        = SearchSpace{};
    bad.trials = 0;
    CHECK_THROWS_AS(sample_trials(bad), HarnessError);
    bad = SearchSpace{};
    bad.batch_sizes.clear();
    CHECK_THROWS_AS(sample_trials(bad), HarnessError);
}

TEST_CASE("random search selects the best mean and disqualifies divergence") {
    std::vector<uint64_t> seeds{ 1, 2, 3 };

    SUBCASE("single point is selected after all seeds") {
        std::vector<Trial> one{ { 1e-4, 8 } };
        auto               res = random_search(one, seeds, runner_with_divergence({}, one));
        CHECK(res.winner == 0);
        REQUIRE(res.records.size() == 3);
        const double want = (fake_outcome(0, 1).val_em + fake_outcome(0, 2).val_em + fake_outcome(0, 3).val_em) / 3;
        CHECK(res.winner_val_em == doctest::Approx(want).epsilon(1e-12));
        CHECK(res.winner_test_em == doctest::Approx(want - 0.05).epsilon(1e-12));
    }

    SUBCASE("mean beats the best single seed") {
        // trial 1 has the higher mean by construction; hand trial 0 one
        // spectacular seed and the mean rule must still pick trial 1
        std::vector<Trial> two{ { 1e-4, 8 }, { 2e-4, 8 } };
        auto run = [&](const Trial & t, uint64_t seed) -> RunOutcome {
            RunOutcome o;
            const bool first = t == two[0];
            o.val_em         = first ? (seed == 1 ? 0.99 : 0.10) : 0.50;  // means: 0.396... vs 0.5
            o.test_em        = first ? 0.2 : 0.6;
            return o;
        };
        auto res = random_search(two, seeds, run);
        CHECK(res.winner == 1);
        CHECK(res.winner_val_em == doctest::Approx(0.5));
        CHECK(res.winner_test_em == doctest::Approx(0.6));
    }

    SUBCASE("a diverged seed disqualifies an otherwise winning trial") {
        auto trials = generic_trial_table();
        // trial 15 would have the best mean; diverge it on one seed
        auto res = random_search(trials, seeds, runner_with_divergence({ { 15, 2 } }, trials));
        CHECK(res.winner == 14);
        const auto & bad = res.records[15 * 3 + 1];  // trial-major layout
        CHECK(bad.trial_index == 15);
        CHECK(bad.seed == 2);
        CHECK(bad.diverged);
        CHECK(bad.val_em == -1);
        CHECK(bad.test_em == -1);
        // the other seeds of the trial still carry their real metrics
        CHECK_FALSE(res.records[15 * 3].diverged);
        CHECK(res.records[15 * 3].val_em > 0);
    }

    SUBCASE("ties fall to the earlier trial") {
        std::vector<Trial> two{ { 1e-4, 8 }, { 2e-4, 8 } };
        auto run = [](const Trial &, uint64_t) { return RunOutcome{ 0.5, 0.4, 10, "" }; };
        CHECK(random_search(two, seeds, run).winner == 0);
    }

    SUBCASE("everything diverging is an error") {
        std::vector<Trial> two{ { 1e-4, 8 }, { 2e-4, 8 } };
        auto run = [](const Trial &, uint64_t) -> RunOutcome { throw TrainingError("non-finite loss at epoch 1"); };
        CHECK_THROWS_WITH_AS(random_search(two, seeds, run), "all trials diverged", HarnessError);
    }

    SUBCASE("empty inputs are rejected") {
        std::vector<Trial> one{ { 1e-4, 8 } };
        CHECK_THROWS_AS(random_search({}, seeds, runner_with_divergence({}, one)), HarnessError);
        CHECK_THROWS_AS(random_search(one, {}, runner_with_divergence({}, one)), HarnessError);
    }
}

TEST_CASE("summarizing archived records reproduces the original selection") {
    std::vector<uint64_t> seeds{ 1, 2, 3 };
    auto                  trials = generic_trial_table();
    auto res = random_search(trials, seeds, runner_with_divergence({ { 15, 2 } }, trials));

    SUBCASE("winner and means match after a round trip through jsonl") {
        auto replay = summarize_records(records_from_jsonl(records_to_jsonl(res.records)));
        CHECK(replay.winner == res.winner);
        CHECK(replay.winner_val_em == res.winner_val_em);
        CHECK(replay.winner_test_em == res.winner_test_em);
        CHECK(replay.records.size() == res.records.size());
    }

    SUBCASE("selection is independent of record order") {
        auto shuffled = res.records;
        std::reverse(shuffled.begin(), shuffled.end());
        auto replay = summarize_records(shuffled);
        CHECK(replay.winner == res.winner);
        CHECK(replay.winner_val_em == res.winner_val_em);
    }

    SUBCASE("degenerate inputs are rejected") {
        CHECK_THROWS_AS(summarize_records({}), HarnessError);
        for (RunRecord & r : res.records) {
            r.diverged = true;
            r.val_em   = -1;
            r.test_em  = -1;
        }
        CHECK_THROWS_WITH_AS(summarize_records(res.records), "all trials diverged", HarnessError);
    }
}

TEST_CASE("records are laid out trial-major with full bookkeeping") {
    std::vector<Trial>    trials{ { 1e-4, 8, 30, 600 }, { 2e-4, 4, 50, 300 } };
    std::vector<uint64_t> seeds{ 7, 9 };
    auto                  res = random_search(trials, seeds, runner_with_divergence({}, trials));
    REQUIRE(res.records.size() == 4);
    for (size_t u = 0; u < 4; ++u) {
        const RunRecord & r = res.records[u];
        CHECK(r.trial_index == (int) (u / 2));
        CHECK(r.trial == trials[u / 2]);
        CHECK(r.seed == seeds[u % 2]);
        CHECK(r.budget == 1000 + r.trial_index);
        CHECK(r.wall_seconds >= 0);
        CHECK(r.log_path == fake_outcome(r.trial_index, r.seed).log_path);
    }
}

TEST_CASE("run records survive the jsonl round trip byte for byte") {
    std::vector<RunRecord> records;
    RunRecord              a;
    a.trial_index  = 3;
    a.trial        = { 3.19e-05, 16, 50, 800 };
    a.seed         = 18446744073709551615ull;  // uint64 max must not be mangled
    a.val_em       = 1.0 / 3.0;
    a.test_em      = 0.119999999999999996;
    a.budget       = 2211840;
    a.wall_seconds = 12.75;
    a.log_path     = "runs/prefix/t3_s1.log";
    records.push_back(a);

    RunRecord b;  // a diverged record keeps its sentinels
    b.trial_index = 0;
    b.trial       = { 1.61e-04, 4 };
    b.seed        = 2;
    b.diverged    = true;
    records.push_back(b);

    const std::string jsonl  = records_to_jsonl(records);
    auto              parsed = records_from_jsonl(jsonl);
    REQUIRE(parsed.size() == 2);
    CHECK(parsed[0] == records[0]);
    CHECK(parsed[1] == records[1]);
    CHECK(records_to_jsonl(parsed) == jsonl);

    // archived records regenerate the results table byte for byte
    CHECK(search_table_tsv(parsed) == search_table_tsv(records));

    // keys come out sorted, one object per line
    const std::string line = record_to_json(a);
    CHECK(line.find("\"batch_size\"") < line.find("\"budget\""));
    CHECK(line.find("\"budget\"") < line.find("\"diverged\""));
    CHECK(line.find('\n') == std::string::npos);

    CHECK_THROWS_AS(record_from_json("{\"lr\": 1e-4}"), HarnessError);
    CHECK_THROWS_WITH_AS(records_from_jsonl("{}\n"), doctest::Contains("line 1"), HarnessError);
}

TEST_CASE("sweep aggregates mean and population spread per point") {
    std::vector<int>      lengths{ 0, 5, 10 };
    std::vector<uint64_t> seeds{ 1, 2, 3, 4 };
    auto em = [](int length, bool special, uint64_t seed) {
        return 0.2 + 0.01 * length + (special ? 0.3 : 0.0) + 0.02 * (double) seed;
    };
    auto points = sweep_prefix_length(lengths, seeds, em);
    REQUIRE(points.size() == 6);  // three lengths, two variants each

    for (size_t i = 0; i < points.size(); ++i) {
        const SweepPoint & p = points[i];
        CHECK(p.length == lengths[i / 2]);
        CHECK(p.special == (i % 2 == 1));
        REQUIRE(p.em.size() == seeds.size());

        // recompute the statistics from scratch
        double mean = 0;
        for (size_t s = 0; s < seeds.size(); ++s) {
            CHECK(p.em[s] == em(p.length, p.special, seeds[s]));
            mean += p.em[s];
        }
        mean /= (double) seeds.size();
        double var = 0;
        for (double x : p.em) var += (x - mean) * (x - mean);
        var /= (double) seeds.size();  // population form
        CHECK(p.mean == doctest::Approx(mean).epsilon(1e-12));
        CHECK(p.stddev == doctest::Approx(std::sqrt(var)).epsilon(1e-12));
    }

    // seeds {1..4} step 0.02 -> population stddev of {0.02,0.04,0.06,0.08}
    CHECK(points[0].stddev == doctest::Approx(std::sqrt(0.0005)).epsilon(1e-9));

    CHECK_THROWS_AS(sweep_prefix_length({}, seeds, em), HarnessError);
    CHECK_THROWS_AS(sweep_prefix_length(lengths, {}, em), HarnessError);
}

TEST_CASE("sweep emissions are deterministic and well formed") {
    std::vector<int>      lengths{ 0, 5, 30 };
    std::vector<uint64_t> seeds{ 1, 2, 3 };
    auto em = [](int length, bool special, uint64_t seed) {
        return std::min(0.95, 0.1 + 0.02 * length + (special ? 0.25 : 0.0) + 0.01 * (double) seed);
    };
    auto points = sweep_prefix_length(lengths, seeds, em);

    const std::string tsv = sweep_table_tsv(points);
    CHECK(tsv == sweep_table_tsv(points));  // pure function of the points
    size_t rows = 0;
    for (char c : tsv) rows += c == '\n';
    CHECK(rows == 1 + points.size());
    CHECK(tsv.find("length\tvariant\tmean_em\tstddev_em\tem_per_seed\n") == 0);
    CHECK(tsv.find("\tplain\t") != std::string::npos);
    CHECK(tsv.find("\tspecial\t") != std::string::npos);

    const std::string svg = sweep_plot_svg(points);
    CHECK(svg == sweep_plot_svg(points));
    CHECK(svg.rfind("<svg ", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
    size_t polylines = 0, pos = 0;
    while ((pos = svg.find("<polyline", pos)) != std::string::npos) {
        ++polylines;
        ++pos;
    }
    CHECK(polylines == 2);  // one trace per variant

    const std::string ascii = sweep_plot_ascii(points);
    CHECK(ascii == sweep_plot_ascii(points));
    CHECK(ascii.find('o') != std::string::npos);
    CHECK(ascii.find('*') != std::string::npos);
    CHECK(ascii.find("+--") != std::string::npos);
    CHECK_THROWS_AS(sweep_plot_ascii(points, 4, 2), HarnessError);
    CHECK_THROWS_AS(sweep_plot_svg({}), HarnessError);
}

TEST_CASE("budget table reproduces the reference parameter counts") {
    ModelConfig cfg;  // reference dimensions: 12 layers, width 1024
    cfg.encoder_layers = 12;
    cfg.decoder_layers = 12;
    cfg.heads          = 16;
    cfg.hid_dim        = 1024;
    cfg.ffn_dim        = 4096;
    cfg.vocab_size     = 50265;
    cfg.max_positions  = 1024;

    TuningStrategy full;
    TuningStrategy prefix30;
    prefix30.kind          = TuningKind::prefix;
    prefix30.prefix.length = 30;
    TuningStrategy sprefix5;
    sprefix5.kind           = TuningKind::prefix;
    sprefix5.prefix.length  = 5;
    sprefix5.special_tokens = true;

    const std::string table = budget_table_text(
        cfg, { { "full", full }, { "prefix30", prefix30 }, { "+st prefix5", sprefix5 } }, 51);
    CHECK(table.find("2,211,840") != std::string::npos);   // prefix30 stored
    CHECK(table.find("420,864") != std::string::npos);     // 368,640 + 51x1024
    CHECK(table.find("100.00%") != std::string::npos);     // full fine-tuning
    CHECK(table == budget_table_text(cfg, { { "full", full }, { "prefix30", prefix30 }, { "+st prefix5", sprefix5 } },
                                     51));
}

TEST_CASE("worker slots come from the environment with a safe fallback") {
    unsetenv("PEFTLAB_WORKERS");
    CHECK(worker_slots() == 1);
    setenv("PEFTLAB_WORKERS", "4", 1);
    CHECK(worker_slots() == 4);
    setenv("PEFTLAB_WORKERS", "0", 1);
    CHECK(worker_slots() == 1);
    setenv("PEFTLAB_WORKERS", "banana", 1);
    CHECK(worker_slots() == 1);
    setenv("PEFTLAB_WORKERS", "99999", 1);
    CHECK(worker_slots() == 64);
    unsetenv("PEFTLAB_WORKERS");
}

TEST_CASE("parallel execution matches the serial run record for record") {
    auto                  trials = generic_trial_table();
    std::vector<uint64_t> seeds{ 1, 2, 3 };
    auto                  run = runner_with_divergence({ { 15, 2 }, { 3, 1 } }, trials);

    unsetenv("PEFTLAB_WORKERS");
    auto serial = random_search(trials, seeds, run);
    setenv("PEFTLAB_WORKERS", "4", 1);
    auto parallel = random_search(trials, seeds, run);
    unsetenv("PEFTLAB_WORKERS");

    CHECK(serial.winner == parallel.winner);
    CHECK(serial.winner_val_em == parallel.winner_val_em);
    CHECK(serial.winner_test_em == parallel.winner_test_em);
    REQUIRE(serial.records.size() == parallel.records.size());
    for (size_t i = 0; i < serial.records.size(); ++i) {
        RunRecord a = serial.records[i], b = parallel.records[i];
        a.wall_seconds = b.wall_seconds = 0;  // timing is the one nondeterministic field
        CHECK(a == b);
    }

    // a non-divergence exception propagates out of the pool
    setenv("PEFTLAB_WORKERS", "4", 1);
    auto boom = [](const Trial &, uint64_t) -> RunOutcome { throw HarnessError("worker exploded"); };
    CHECK_THROWS_AS(random_search(trials, seeds, boom), HarnessError);
    unsetenv("PEFTLAB_WORKERS");
}
