// SPDX-License-Identifier: Apache-2.0
// Experiment harness: search/sweep orchestration and deterministic emission.

#include "peftlab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "peftlab/rng.hpp"
#include "peftlab/training.hpp"

namespace peftlab {

using nlohmann::json;

bool operator==(const Trial & a, const Trial & b) {
    return a.lr == b.lr && a.batch_size == b.batch_size && a.prefix_length == b.prefix_length &&
           a.mid_dim == b.mid_dim;
}

bool operator==(const RunRecord & a, const RunRecord & b) {
    return a.trial_index == b.trial_index && a.trial == b.trial && a.seed == b.seed && a.val_em == b.val_em &&
           a.test_em == b.test_em && a.budget == b.budget && a.wall_seconds == b.wall_seconds &&
           a.log_path == b.log_path && a.diverged == b.diverged;
}

// Published random-search draws for prefix tuning: (lr, bsz, prefix_length,
// mid_dim) per trial, in trial order.
std::vector<Trial> prefix_trial_table() {
    return {
        { 3.19e-05, 16, 50, 800 },  //
        { 1.13e-04, 4, 50, 300 },   //
        { 3.00e-04, 8, 100, 800 },  //
        { 4.62e-05, 16, 30, 600 },  //
        { 4.27e-04, 4, 50, 300 },   //
        { 1.79e-05, 16, 30, 300 },  //
        { 5.89e-05, 4, 50, 800 },   //
        { 3.88e-05, 16, 20, 600 },  //
        { 5.93e-06, 16, 30, 300 },  //
        { 6.23e-05, 16, 100, 300 }, //
        { 5.81e-06, 8, 100, 600 },  //
        { 1.25e-04, 4, 50, 800 },   //
        { 2.64e-05, 16, 20, 600 },  //
        { 3.98e-05, 4, 20, 300 },   //
        { 1.25e-05, 4, 100, 800 },  //
        { 3.70e-05, 16, 20, 300 },  //
    };
}

// Published draws for full / partial fine-tuning and bitfit: (lr, bsz).
std::vector<Trial> generic_trial_table() {
    return {
        { 1.61e-04, 4 },  //
        { 7.34e-05, 16 }, //
        { 2.52e-04, 4 },  //
        { 1.22e-04, 4 },  //
        { 1.49e-05, 8 },  //
        { 3.69e-04, 8 },  //
        { 5.82e-05, 4 },  //
        { 1.50e-05, 8 },  //
        { 4.07e-05, 16 }, //
        { 1.40e-05, 16 }, //
        { 5.40e-06, 16 }, //
        { 1.50e-05, 8 },  //
        { 9.82e-05, 4 },  //
        { 7.07e-05, 4 },  //
        { 1.42e-04, 8 },  //
        { 4.38e-05, 4 },  //
    };
}

void overwrite_prefix_length(std::vector<Trial> & trials, int length) {
    if (length < 0) throw HarnessError("negative fixed prefix length");
    for (Trial & t : trials) t.prefix_length = length;
}

void SearchSpace::validate() const {
    if (trials < 1) throw HarnessError("search needs at least one trial");
    if (!(lr_min > 0) || !(lr_max >= lr_min)) throw HarnessError("learning-rate range must satisfy 0 < min <= max");
    if (batch_sizes.empty()) throw HarnessError("empty batch-size inventory");
    if (prefix_dims && (lengths.empty() || mid_dims.empty())) {
        throw HarnessError("prefix search needs length and mid_dim inventories");
    }
}

std::vector<Trial> sample_trials(const SearchSpace & space) {
    space.validate();
    Rng                rng(space.master_seed);
    const double       lo = std::log(space.lr_min);
    const double       hi = std::log(space.lr_max);
    std::vector<Trial> out;
    out.reserve((size_t) space.trials);
    for (int i = 0; i < space.trials; ++i) {
        Trial t;
        t.lr         = std::exp(lo + rng.next_double() * (hi - lo));
        t.batch_size = space.batch_sizes[(size_t) rng.next_index((int64_t) space.batch_sizes.size())];
        if (space.prefix_dims) {
            t.prefix_length = space.lengths[(size_t) rng.next_index((int64_t) space.lengths.size())];
            t.mid_dim       = space.mid_dims[(size_t) rng.next_index((int64_t) space.mid_dims.size())];
        }
        out.push_back(t);
    }
    return out;
}

std::string record_to_json(const RunRecord & r) {
    json j;
    j["trial_index"]   = r.trial_index;
    j["lr"]            = r.trial.lr;
    j["batch_size"]    = r.trial.batch_size;
    j["prefix_length"] = r.trial.prefix_length;
    j["mid_dim"]       = r.trial.mid_dim;
    j["seed"]          = r.seed;
    j["val_em"]        = r.val_em;
    j["test_em"]       = r.test_em;
    j["budget"]        = r.budget;
    j["wall_seconds"]  = r.wall_seconds;
    j["log_path"]      = r.log_path;
    j["diverged"]      = r.diverged;
    return j.dump();  // object keys are sorted, doubles round-trip exactly
}

RunRecord record_from_json(const std::string & line) {
    try {
        json      j = json::parse(line);
        RunRecord r;
        r.trial_index         = j.at("trial_index").get<int>();
        r.trial.lr            = j.at("lr").get<double>();
        r.trial.batch_size    = j.at("batch_size").get<int>();
        r.trial.prefix_length = j.at("prefix_length").get<int>();
        r.trial.mid_dim       = j.at("mid_dim").get<int>();
        r.seed                = j.at("seed").get<uint64_t>();
        r.val_em              = j.at("val_em").get<double>();
        r.test_em             = j.at("test_em").get<double>();
        r.budget              = j.at("budget").get<int64_t>();
        r.wall_seconds        = j.at("wall_seconds").get<double>();
        r.log_path            = j.at("log_path").get<std::string>();
        r.diverged            = j.at("diverged").get<bool>();
        return r;
    } catch (const json::exception & e) {
        throw HarnessError(std::string("bad run record: ") + e.what());
    }
}

std::string records_to_jsonl(const std::vector<RunRecord> & records) {
    std::string out;
    for (const RunRecord & r : records) {
        out += record_to_json(r);
        out += '\n';
    }
    return out;
}

std::vector<RunRecord> records_from_jsonl(const std::string & text) {
    std::vector<RunRecord> out;
    size_t                 pos = 0, line_no = 0;
    while (pos < text.size()) {
        size_t      end  = text.find('\n', pos);
        std::string line = text.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
        pos              = end == std::string::npos ? text.size() : end + 1;
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(record_from_json(line));
        } catch (const HarnessError & e) {
            throw HarnessError("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

int worker_slots() {
    const char * env = std::getenv("PEFTLAB_WORKERS");
    if (env == nullptr) return 1;
    char *       tail = nullptr;
    const long   n    = std::strtol(env, &tail, 10);
    if (tail == env || *tail != '\0' || n < 1) return 1;
    return (int) (n > 64 ? 64 : n);
}

namespace detail {

void run_units(int64_t n, int workers, const std::function<void(int64_t)> & fn) {
    if (n <= 0) return;
    if (workers > n) workers = (int) n;
    if (workers <= 1) {
        for (int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int64_t>     next{ 0 };
    std::exception_ptr       first_error;
    std::mutex               error_mutex;
    std::vector<std::thread> pool;
    pool.reserve((size_t) workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const int64_t i = next.fetch_add(1);
                if (i >= n) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    for (std::thread & t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

std::string format_count(int64_t n) {
    std::string digits = std::to_string(n < 0 ? -n : n);
    std::string out;
    for (size_t i = 0; i < digits.size(); ++i) {
        if (i > 0 && (digits.size() - i) % 3 == 0) out += ',';
        out += digits[i];
    }
    return n < 0 ? "-" + out : out;
}

namespace {

double mean_of(const std::vector<double> & xs) {
    double s = 0;
    for (double x : xs) s += x;
    return xs.empty() ? 0.0 : s / (double) xs.size();
}

double population_stddev(const std::vector<double> & xs, double mean) {
    if (xs.empty()) return 0.0;
    double s = 0;
    for (double x : xs) s += (x - mean) * (x - mean);
    return std::sqrt(s / (double) xs.size());
}

std::string fmt_double(double v) { return json(v).dump(); }

std::string fmt_fixed(double v, int places) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", places, v);
    return buf;
}

}  // namespace

}  // namespace detail

SearchResult random_search(const std::vector<Trial> & trials, const std::vector<uint64_t> & seeds,
                           const TrialRunner & run) {
    if (trials.empty()) throw HarnessError("no trials to search");
    if (seeds.empty()) throw HarnessError("no seeds to replicate over");
    if (!run) throw HarnessError("null trial runner");

    SearchResult  res;
    const int64_t per = (int64_t) seeds.size();
    res.records.resize(trials.size() * seeds.size());

    detail::run_units((int64_t) res.records.size(), worker_slots(), [&](int64_t u) {
        const int64_t ti  = u / per;
        const int64_t si  = u % per;
        RunRecord &   rec = res.records[(size_t) u];
        rec.trial_index   = (int) ti;
        rec.trial         = trials[(size_t) ti];
        rec.seed          = seeds[(size_t) si];
        const auto t0     = std::chrono::steady_clock::now();
        try {
            RunOutcome o = run(rec.trial, rec.seed);
            rec.val_em   = o.val_em;
            rec.test_em  = o.test_em;
            rec.budget   = o.budget;
            rec.log_path = o.log_path;
        } catch (const TrainingError &) {
            rec.diverged = true;  // metrics stay at the -1 sentinel
        }
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    });
    return summarize_records(res.records);
}

SearchResult summarize_records(const std::vector<RunRecord> & records) {
    if (records.empty()) throw HarnessError("no records to summarize");
    SearchResult res;
    res.records = records;

    // Group seeds by trial index; mean validation EM decides, one diverged
    // seed disqualifies the whole trial, ties fall to the earlier trial.
    std::map<int, std::vector<const RunRecord *>> trials;
    for (const RunRecord & r : records) trials[r.trial_index].push_back(&r);

    double best = 0;
    for (const auto & [ti, recs] : trials) {
        std::vector<double> vals, tests;
        bool                diverged = false;
        for (const RunRecord * r : recs) {
            diverged = diverged || r->diverged;
            vals.push_back(r->val_em);
            tests.push_back(r->test_em);
        }
        if (diverged) continue;
        const double mv = detail::mean_of(vals);
        if (res.winner < 0 || mv > best) {
            res.winner         = ti;
            best               = mv;
            res.winner_val_em  = mv;
            res.winner_test_em = detail::mean_of(tests);
        }
    }
    if (res.winner < 0) throw HarnessError("all trials diverged");
    return res;
}

std::vector<SweepPoint> sweep_prefix_length(const std::vector<int> & lengths, const std::vector<uint64_t> & seeds,
                                            const SweepRunner & run) {
    if (lengths.empty()) throw HarnessError("no lengths to sweep");
    if (seeds.empty()) throw HarnessError("no seeds to replicate over");
    if (!run) throw HarnessError("null sweep runner");

    std::vector<SweepPoint> points(lengths.size() * 2);
    for (size_t li = 0; li < lengths.size(); ++li) {
        for (int v = 0; v < 2; ++v) {
            SweepPoint & p = points[li * 2 + (size_t) v];
            p.length       = lengths[li];
            p.special      = v == 1;
            p.em.resize(seeds.size());
        }
    }

    const int64_t per = (int64_t) seeds.size();
    detail::run_units((int64_t)(points.size() * seeds.size()), worker_slots(), [&](int64_t u) {
        SweepPoint & p         = points[(size_t)(u / per)];
        const size_t si        = (size_t)(u % per);
        p.em[si]               = run(p.length, p.special, seeds[si]);
    });

    for (SweepPoint & p : points) {
        p.mean   = detail::mean_of(p.em);
        p.stddev = detail::population_stddev(p.em, p.mean);
    }
    return points;
}

std::string search_table_tsv(const std::vector<RunRecord> & records) {
    std::string out = "trial\tlr\tbsz\tprefix_length\tmid_dim\tseed\tval_em\ttest_em\tbudget\twall_seconds\tdiverged\tlog\n";
    for (const RunRecord & r : records) {
        out += std::to_string(r.trial_index);
        out += '\t';
        out += detail::fmt_double(r.trial.lr);
        out += '\t';
        out += std::to_string(r.trial.batch_size);
        out += '\t';
        out += std::to_string(r.trial.prefix_length);
        out += '\t';
        out += std::to_string(r.trial.mid_dim);
        out += '\t';
        out += std::to_string(r.seed);
        out += '\t';
        out += detail::fmt_double(r.val_em);
        out += '\t';
        out += detail::fmt_double(r.test_em);
        out += '\t';
        out += std::to_string(r.budget);
        out += '\t';
        out += detail::fmt_double(r.wall_seconds);
        out += '\t';
        out += r.diverged ? '1' : '0';
        out += '\t';
        out += r.log_path;
        out += '\n';
    }
    return out;
}

std::string sweep_table_tsv(const std::vector<SweepPoint> & points) {
    std::string out = "length\tvariant\tmean_em\tstddev_em\tem_per_seed\n";
    for (const SweepPoint & p : points) {
        out += std::to_string(p.length);
        out += '\t';
        out += p.special ? "special" : "plain";
        out += '\t';
        out += detail::fmt_fixed(p.mean, 6);
        out += '\t';
        out += detail::fmt_fixed(p.stddev, 6);
        out += '\t';
        for (size_t i = 0; i < p.em.size(); ++i) {
            if (i > 0) out += ',';
            out += detail::fmt_fixed(p.em[i], 6);
        }
        out += '\n';
    }
    return out;
}

namespace {

struct PlotRange {
    int min_len = 0, max_len = 1;
};

PlotRange plot_range(const std::vector<SweepPoint> & points) {
    PlotRange r;
    r.min_len = points.front().length;
    r.max_len = points.front().length;
    for (const SweepPoint & p : points) {
        r.min_len = std::min(r.min_len, p.length);
        r.max_len = std::max(r.max_len, p.length);
    }
    if (r.min_len == r.max_len) r.max_len = r.min_len + 1;  // avoid a zero span
    return r;
}

}  // namespace

std::string sweep_plot_svg(const std::vector<SweepPoint> & points) {
    if (points.empty()) throw HarnessError("nothing to plot");
    const PlotRange r = plot_range(points);
    const double    x0 = 60, x1 = 620, y0 = 360, y1 = 20;  // plot box, y grows downward
    auto            sx = [&](int len) { return x0 + (x1 - x0) * (double) (len - r.min_len) / (double) (r.max_len - r.min_len); };
    auto            sy = [&](double em) { return y0 + (y1 - y0) * em; };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" viewBox=\"0 0 640 400\">\n";
    svg << "<rect x=\"0\" y=\"0\" width=\"640\" height=\"400\" fill=\"white\"/>\n";
    for (int i = 0; i <= 4; ++i) {  // horizontal grid at 0, .25, .5, .75, 1
        const double em = 0.25 * i;
        svg << "<line x1=\"" << detail::fmt_fixed(x0, 1) << "\" y1=\"" << detail::fmt_fixed(sy(em), 1) << "\" x2=\""
            << detail::fmt_fixed(x1, 1) << "\" y2=\"" << detail::fmt_fixed(sy(em), 1)
            << "\" stroke=\"#ddd\" stroke-width=\"1\"/>\n";
        svg << "<text x=\"" << detail::fmt_fixed(x0 - 8, 1) << "\" y=\"" << detail::fmt_fixed(sy(em) + 4, 1)
            << "\" font-size=\"12\" text-anchor=\"end\">" << detail::fmt_fixed(em, 2) << "</text>\n";
    }
    for (int v = 0; v < 2; ++v) {
        const bool        special = v == 1;
        const char *      color   = special ? "#d62728" : "#1f77b4";
        std::ostringstream pts;
        bool               first = true;
        for (const SweepPoint & p : points) {
            if (p.special != special) continue;
            if (!first) pts << " ";
            pts << detail::fmt_fixed(sx(p.length), 1) << "," << detail::fmt_fixed(sy(p.mean), 1);
            first = false;
            // error bar: mean +/- stddev, clamped to the box
            const double lo = std::max(0.0, p.mean - p.stddev);
            const double hi = std::min(1.0, p.mean + p.stddev);
            svg << "<line x1=\"" << detail::fmt_fixed(sx(p.length), 1) << "\" y1=\"" << detail::fmt_fixed(sy(lo), 1)
                << "\" x2=\"" << detail::fmt_fixed(sx(p.length), 1) << "\" y2=\"" << detail::fmt_fixed(sy(hi), 1)
                << "\" stroke=\"" << color << "\" stroke-width=\"1\"/>\n";
            svg << "<circle cx=\"" << detail::fmt_fixed(sx(p.length), 1) << "\" cy=\""
                << detail::fmt_fixed(sy(p.mean), 1) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
            svg << "<text x=\"" << detail::fmt_fixed(sx(p.length), 1) << "\" y=\"" << detail::fmt_fixed(y0 + 16.0, 1)
                << "\" font-size=\"12\" text-anchor=\"middle\">" << p.length << "</text>\n";
        }
        svg << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\"" << color
            << "\" stroke-width=\"2\"/>\n";
    }
    svg << "<text x=\"340\" y=\"392\" font-size=\"13\" text-anchor=\"middle\">prefix length</text>\n";
    svg << "<text x=\"16\" y=\"190\" font-size=\"13\" transform=\"rotate(-90 16 190)\" text-anchor=\"middle\">"
           "exact match</text>\n";
    svg << "<text x=\"80\" y=\"32\" font-size=\"12\" fill=\"#1f77b4\">plain prefix</text>\n";
    svg << "<text x=\"180\" y=\"32\" font-size=\"12\" fill=\"#d62728\">with special tokens</text>\n";
    svg << "</svg>\n";
    return svg.str();
}

std::string sweep_plot_ascii(const std::vector<SweepPoint> & points, int width, int height) {
    if (points.empty()) throw HarnessError("nothing to plot");
    if (width < 16 || height < 4) throw HarnessError("plot area too small");
    const PlotRange r = plot_range(points);

    std::vector<std::string> grid((size_t) height, std::string((size_t) width, ' '));
    auto mark = [&](const SweepPoint & p) {
        const int col = (int) std::lround((double) (p.length - r.min_len) / (double) (r.max_len - r.min_len) *
                                          (width - 1));
        const int row = (int) std::lround((1.0 - std::min(1.0, std::max(0.0, p.mean))) * (height - 1));
        char &    c   = grid[(size_t) row][(size_t) col];
        const char glyph = p.special ? '*' : 'o';
        c = (c == ' ' || c == glyph) ? glyph : '@';
    };
    for (const SweepPoint & p : points) mark(p);

    std::string out;
    for (int row = 0; row < height; ++row) {
        const double em = 1.0 - (double) row / (double) (height - 1);
        out += detail::fmt_fixed(em, 2);
        out += " |";
        out += grid[(size_t) row];
        out += '\n';
    }
    out += "     +";
    out += std::string((size_t) width, '-');
    out += '\n';
    out += "      lengths " + std::to_string(r.min_len) + ".." + std::to_string(points.back().length) +
           "   o plain   * special   @ both\n";
    return out;
}

std::string budget_table_text(const ModelConfig & cfg,
                              const std::vector<std::pair<std::string, TuningStrategy>> & strategies,
                              int special_rows) {
    std::ostringstream out;
    char               line[160];
    std::snprintf(line, sizeof line, "%-14s %14s %14s %14s %9s\n", "strategy", "formula", "stored", "train-time",
                  "percent");
    out << line;
    for (const auto & [name, st] : strategies) {
        const BudgetReport b = compute_budget(cfg, st, special_rows);
        std::snprintf(line, sizeof line, "%-14s %14s %14s %14s %8s%%\n", name.c_str(),
                      detail::format_count(b.formula).c_str(), detail::format_count(b.stored).c_str(),
                      detail::format_count(b.train_time).c_str(), format_percent(b.percent).c_str());
        out << line;
    }
    return out.str();
}

}  // namespace peftlab
