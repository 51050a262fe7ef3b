// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Subcommands cover the whole workflow: corpus
// generation and format conversion, single training/evaluation runs over
// plain-text configs with key=value overrides, random hyperparameter search
// and prefix-length sweeps over the miniature study, space-budget tables,
// and byte-identical report regeneration from archived run records.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "peftlab/datagen.hpp"
#include "peftlab/experiment.hpp"
#include "peftlab/harness.hpp"
#include "peftlab/tokenizer.hpp"
#include "peftlab/top_format.hpp"
#include "peftlab/training.hpp"
#include "peftlab/tuning.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace peftlab;

namespace {

double elapsed_seconds(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string read_text_file(const std::string & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const fs::path & path, const std::string & text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

void write_manifest(const fs::path & dir, const json & j) { write_text_file(dir / "manifest.json", j.dump(2) + "\n"); }

// Config = optional file + command-line key=value overrides.
KvConfig load_config(const std::string & path, const std::vector<std::string> & sets) {
    KvConfig kv = path.empty() ? KvConfig() : KvConfig::from_file(path);
    for (const std::string & s : sets) kv.set_pair(s);
    return kv;
}

std::vector<std::string> labels_in_rows(const std::vector<DatasetRow> & rows) {
    std::set<std::string> seen;
    for (const DatasetRow & r : rows) {
        for (const std::string & l : collect_labels(parse_tree(r.target))) seen.insert(l);
    }
    return { seen.begin(), seen.end() };
}

Grammar pick_grammar(const std::string & file, const std::string & builtin) {
    if (!file.empty()) return parse_grammar(read_text_file(file));
    if (builtin == "food") return default_food_grammar();
    if (builtin == "assistant") return default_pretrain_grammar();
    throw std::runtime_error("unknown builtin grammar '" + builtin + "' (have: food, assistant)");
}

// The published reference dimensions the budget tables are quoted against.
ModelConfig reference_model_config() {
    ModelConfig cfg;
    cfg.encoder_layers = 12;
    cfg.decoder_layers = 12;
    cfg.heads          = 16;
    cfg.hid_dim        = 1024;
    cfg.ffn_dim        = 4096;
    cfg.vocab_size     = 50265;
    cfg.max_positions  = 1026;
    return cfg;
}

json budget_json(const BudgetReport & b) {
    return json{ { "total", b.total },
                 { "formula", b.formula },
                 { "stored", b.stored },
                 { "train_time", b.train_time },
                 { "percent", format_percent(b.percent) } };
}

// ---- train / evaluate ----

struct TrainArgs {
    std::string config, train, dev, vocab, merges, init, run;
    std::vector<std::string> sets;
    int bpe_size = 0;
};

template <typename Real>
int run_train(const TrainArgs & a, const KvConfig & kv, ModelConfig mc, const TuningStrategy & st,
              const TrainConfig & tc, const Tokenizer & tok, const std::vector<DatasetRow> & train_rows,
              const std::vector<DatasetRow> & dev_rows) {
    const fs::path run(a.run);
    const auto     t0 = std::chrono::steady_clock::now();

    ParamStore<Real> store;
    if (a.init.empty()) {
        store = init_model_params<Real>(mc, tc.seed);
        if (!tok.vocab.special_labels.empty()) overwrite_special_rows(store, tok);
    } else {
        store = load_checkpoint<Real>(a.init);
    }

    const int    specials = (int) tok.vocab.special_labels.size();
    StrategyPlan plan     = apply_strategy(store, mc, st, specials, tc.seed);

    auto train = encode_dataset(train_rows, tok, st.special_tokens, mc.max_positions);
    auto dev   = encode_dataset(dev_rows, tok, st.special_tokens, mc.max_positions);
    auto grown = duplicate_low_data(train, tc.duplication_target);
    if (grown.size() != train.size()) {
        std::printf("duplicated %zu rows to %zu (duplication target %d)\n", train.size(), grown.size(),
                    tc.duplication_target);
    }

    std::ofstream log(run / "epochs.tsv", std::ios::binary);
    log << "epoch\ttrain_loss\tval_em\n";
    auto out = train_model(store, mc, plan, tc, grown, dev, tok, [&](const EpochRecord & r) {
        std::printf("epoch %3d  loss %.4f  val_em %s\n", r.epoch, r.train_loss,
                    r.evaluated ? std::to_string(r.val_em).c_str() : "-");
        char line[96];
        std::snprintf(line, sizeof line, "%d\t%.6f\t%.6f\n", r.epoch, r.train_loss, r.val_em);
        log << line << std::flush;
    });

    save_checkpoint(out.best_params, (run / "model.ckpt").string());
    save_tokenizer(tok, (run / "vocab.tsv").string(), (run / "merges.tsv").string());

    KvConfig resolved;
    mc.to_kv(resolved);
    st.to_kv(resolved);
    tc.to_kv(resolved);
    write_text_file(run / "config.txt", resolved.render());
    (void) kv;

    json manifest{ { "command", "train" },
                   { "strategy", st.display_name() },
                   { "train_rows", train_rows.size() },
                   { "dev_rows", dev_rows.size() },
                   { "budget", budget_json(plan.budget) },
                   { "best_val_em", out.best_val_em },
                   { "best_epoch", out.best_epoch },
                   { "epochs", out.epochs.size() },
                   { "stopped_early", out.stopped_early },
                   { "wall_seconds", elapsed_seconds(t0) } };
    write_manifest(run, manifest);

    std::printf("%s: best val_em %.4f at epoch %d (%d epochs, %s)\n", st.display_name().c_str(), out.best_val_em,
                out.best_epoch, (int) out.epochs.size(), out.stopped_early ? "stopped early" : "ran to the cap");
    std::printf("trainable parameters: %s of %s (%s%%)\n", detail::format_count(plan.budget.train_time).c_str(),
                detail::format_count(plan.budget.total).c_str(), format_percent(plan.budget.percent).c_str());
    std::printf("run directory: %s\n", run.string().c_str());
    return 0;
}

struct EvalArgs {
    std::string run, config, checkpoint, vocab, merges, data, dump;
    std::vector<std::string> sets;
};

template <typename Real>
int run_evaluate(const EvalArgs & a, ModelConfig mc, const TuningStrategy & st, const TrainConfig & tc,
                 const Tokenizer & tok, const std::vector<DatasetRow> & rows, const std::string & ckpt) {
    ParamStore<Real> store    = load_checkpoint<Real>(ckpt);
    const int        specials = (int) tok.vocab.special_labels.size();
    StrategyPlan     plan     = restore_strategy(store, mc, st, specials);

    auto examples = encode_dataset(rows, tok, st.special_tokens, mc.max_positions);

    InferenceModel<Real> model(store, mc, materialize_prefix(store, mc, plan));
    DecodeFn             decode = [&](const std::vector<int32_t> & src) {
        auto es = model.encode(src);
        return model.beam_decode(es, tc.beam_size, tc.max_target_length).ids;
    };

    if (a.dump.empty()) {
        EvalResult ev = evaluate_em(examples, decode, tok);
        std::printf("exact match %d/%d = %.4f\n", ev.matches, ev.total, ev.em());
        return 0;
    }

    std::ofstream out(a.dump, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + a.dump);
    out << "utterance\tgold\tpredicted\tmatch\n";
    int matches = 0;
    for (size_t i = 0; i < examples.size(); ++i) {
        const std::string hyp   = tok.decode(decode(examples[i].src));
        bool              match = false;
        try {
            match = unordered_exact_match(parse_tree(hyp), parse_tree(examples[i].target_text));
        } catch (const FormatError &) {
            // an unparsable hypothesis never matches
        }
        matches += match ? 1 : 0;
        out << rows[i].utterance << '\t' << examples[i].target_text << '\t' << hyp << '\t' << (match ? 1 : 0)
            << '\n';
    }
    std::printf("exact match %d/%zu = %.4f\n", matches, examples.size(),
                examples.empty() ? 0.0 : (double) matches / (double) examples.size());
    std::printf("predictions: %s\n", a.dump.c_str());
    return 0;
}

// ---- the miniature laboratory behind search and sweep ----

struct LabArgs {
    std::string run, base, vocab, merges;
    uint64_t    corpus_seed   = 7;
    uint64_t    pretrain_seed = 1;
};

struct MiniLab {
    MiniProtocol      proto;
    MiniCorpus        corpus;
    Tokenizer         tok;
    ModelConfig       cfg;
    ParamStore<float> base;
};

MiniLab assemble_mini_lab(const LabArgs & a) {
    MiniLab lab;
    lab.corpus = build_mini_corpus(lab.proto, a.corpus_seed);
    if (!a.vocab.empty() != !a.merges.empty()) throw std::runtime_error("--vocab and --merges go together");
    lab.tok = a.vocab.empty() ? build_mini_tokenizer(lab.corpus, lab.proto.bpe_vocab)
                              : load_tokenizer(a.vocab, a.merges);
    lab.cfg = mini_model_config(lab.tok);

    const fs::path run(a.run);
    if (!a.base.empty()) {
        lab.base = load_checkpoint<float>(a.base);
    } else {
        std::printf("pretraining the base model on the assistant domain (several minutes)...\n");
        std::fflush(stdout);
        TrainConfig pc = mini_pretrain_config(a.pretrain_seed);
        double      em = 0;
        lab.base       = pretrain_base<float>(lab.cfg, lab.tok, lab.corpus, pc, &em);
        save_checkpoint(lab.base, (run / "base.ckpt").string());
        std::printf("pretrained base: assistant dev EM %.3f (saved %s)\n", em, (run / "base.ckpt").string().c_str());
    }
    save_tokenizer(lab.tok, (run / "vocab.tsv").string(), (run / "merges.tsv").string());
    return lab;
}

TuningStrategy catalog_strategy(const std::string & name) {
    for (auto & [n, st] : mini_strategy_catalog()) {
        if (n == name) return st;
    }
    std::string have;
    for (auto & [n, st] : mini_strategy_catalog()) have += (have.empty() ? "" : ", ") + n;
    throw std::runtime_error("unknown strategy '" + name + "' (have: " + have + ")");
}

std::string trial_log_name(const Trial & t, uint64_t seed) {
    char buf[128];
    if (t.prefix_length >= 0) {
        std::snprintf(buf, sizeof buf, "runs/lr%.4e_b%d_len%d_mid%d_s%llu.tsv", t.lr, t.batch_size, t.prefix_length,
                      t.mid_dim, (unsigned long long) seed);
    } else {
        std::snprintf(buf, sizeof buf, "runs/lr%.4e_b%d_s%llu.tsv", t.lr, t.batch_size, (unsigned long long) seed);
    }
    return buf;
}

std::function<void(const EpochRecord &)> epoch_logger(std::ofstream & log) {
    log << "epoch\ttrain_loss\tval_em\n";
    return [&log](const EpochRecord & r) {
        char line[96];
        std::snprintf(line, sizeof line, "%d\t%.6f\t%.6f\n", r.epoch, r.train_loss, r.val_em);
        log << line << std::flush;
    };
}

}  // namespace

int main(int argc, char ** argv) {
    CLI::App app{ "space-efficient fine-tuning laboratory for semantic parsing" };
    app.require_subcommand(1);

    // ---- generate ----
    struct {
        std::string grammar, builtin = "food", out;
        int64_t     count = 2000;
        uint64_t    seed = 1, spis_seed = 0;
        int64_t     spis = 0;
        bool        dedupe = false, decouple_targets = false;
    } gen;
    auto * cgen = app.add_subcommand("generate", "sample a synthetic corpus from a grammar");
    cgen->add_option("--grammar", gen.grammar, "grammar file")->check(CLI::ExistingFile);
    cgen->add_option("--builtin", gen.builtin, "built-in grammar: food | assistant (default food)");
    cgen->add_option("--count", gen.count, "examples to sample (default 2000)");
    cgen->add_option("--seed", gen.seed, "sampling seed (default 1)");
    cgen->add_flag("--dedupe", gen.dedupe, "keep the first row per distinct utterance");
    cgen->add_flag("--decouple", gen.decouple_targets, "store targets in decoupled form");
    cgen->add_option("--spis", gen.spis, "keep an n-SPIS covering sample");
    cgen->add_option("--spis-seed", gen.spis_seed, "tie-break seed for the covering sample");
    cgen->add_option("--out", gen.out, "output TSV")->required();
    cgen->callback([&] {
        Grammar g = pick_grammar(gen.grammar, gen.builtin);
        auto    rows = generate(g, gen.count, gen.seed);
        if (gen.dedupe) rows = dedupe_by_utterance(rows);
        if (gen.decouple_targets) {
            for (DatasetRow & r : rows) r.target = serialize_tree(decouple(parse_tree(r.target)));
        }
        if (gen.spis > 0) {
            SpisResult s = spis_sample(rows, SpisSpec{ gen.spis, gen.spis_seed });
            for (const std::string & w : s.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
            rows = s.rows;
        }
        write_dataset_tsv(gen.out, rows);
        std::printf("wrote %zu rows (%zu distinct labels) to %s\n", rows.size(), labels_in_rows(rows).size(),
                    gen.out.c_str());
    });

    // ---- convert ----
    struct {
        std::string in, out;
        bool        canonical = false;
    } conv;
    auto * cconv = app.add_subcommand("convert", "rewrite targets in decoupled (or canonical) form");
    cconv->add_option("--in", conv.in, "input TSV")->required()->check(CLI::ExistingFile);
    cconv->add_option("--out", conv.out, "output TSV")->required();
    cconv->add_flag("--canonical", conv.canonical, "canonical order instead of plain decoupling");
    cconv->callback([&] {
        auto                 rows = read_dataset_tsv(conv.in);
        std::vector<int64_t> before, after;
        for (DatasetRow & r : rows) {
            SemTree t = parse_tree(r.target);
            before.push_back(semantic_node_count(t));
            r.target = serialize_tree(conv.canonical ? canonicalize(t) : decouple(t));
            after.push_back(semantic_node_count(parse_tree(r.target)));
        }
        write_dataset_tsv(conv.out, rows);
        std::printf("converted %zu rows (mean semantic nodes %.2f -> %.2f) to %s\n", rows.size(),
                    length_stats(before).mean, length_stats(after).mean, conv.out.c_str());
    });

    // ---- train ----
    TrainArgs tr;
    auto *    ctrain = app.add_subcommand("train", "one training run under a config");
    ctrain->add_option("--config", tr.config, "key = value config file")->check(CLI::ExistingFile);
    ctrain->add_option("--set", tr.sets, "override, e.g. --set train.lr=3e-4");
    ctrain->add_option("--train", tr.train, "training TSV")->required()->check(CLI::ExistingFile);
    ctrain->add_option("--dev", tr.dev, "validation TSV")->check(CLI::ExistingFile);
    ctrain->add_option("--vocab", tr.vocab, "tokenizer vocab file")->check(CLI::ExistingFile);
    ctrain->add_option("--merges", tr.merges, "tokenizer merges file")->check(CLI::ExistingFile);
    ctrain->add_option("--bpe-size", tr.bpe_size, "train a tokenizer of this size on the training rows");
    ctrain->add_option("--init", tr.init, "starting checkpoint (default: random init)")->check(CLI::ExistingFile);
    ctrain->add_option("--run", tr.run, "run directory")->required();
    ctrain->callback([&] {
        KvConfig       kv = load_config(tr.config, tr.sets);
        TuningStrategy st = TuningStrategy::from_kv(kv);
        TrainConfig    tc = TrainConfig::from_kv(kv);
        ModelConfig    mc = ModelConfig::from_kv(kv);

        auto train_rows = read_dataset_tsv(tr.train);
        auto dev_rows   = tr.dev.empty() ? std::vector<DatasetRow>{} : read_dataset_tsv(tr.dev);

        Tokenizer tok;
        if (!tr.vocab.empty() || !tr.merges.empty()) {
            if (tr.vocab.empty() || tr.merges.empty()) throw std::runtime_error("--vocab and --merges go together");
            tok = load_tokenizer(tr.vocab, tr.merges);
        } else if (tr.bpe_size > 0) {
            std::vector<std::string> corpus;
            for (const DatasetRow & r : train_rows) {
                corpus.push_back(r.utterance);
                corpus.push_back(r.target);
            }
            tok = train_bpe(corpus, tr.bpe_size);
            add_special_labels(tok, labels_in_rows(train_rows));
        } else {
            throw std::runtime_error("need --vocab/--merges or --bpe-size");
        }

        if (mc.vocab_size == 0) mc.vocab_size = tok.vocab.size();
        mc.validate();
        kv.require_all_consumed();
        fs::create_directories(fs::path(tr.run) / "");

        if (mc.precision == "f64") run_train<double>(tr, kv, mc, st, tc, tok, train_rows, dev_rows);
        else run_train<float>(tr, kv, mc, st, tc, tok, train_rows, dev_rows);
    });

    // ---- evaluate ----
    EvalArgs ev;
    auto *   ceval = app.add_subcommand("evaluate", "exact match of a checkpoint on a dataset");
    ceval->add_option("--run", ev.run, "train run directory (supplies config/checkpoint/tokenizer)");
    ceval->add_option("--config", ev.config, "config file (overrides the run's)")->check(CLI::ExistingFile);
    ceval->add_option("--set", ev.sets, "config override, e.g. --set train.beam_size=6");
    ceval->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->check(CLI::ExistingFile);
    ceval->add_option("--vocab", ev.vocab, "tokenizer vocab file")->check(CLI::ExistingFile);
    ceval->add_option("--merges", ev.merges, "tokenizer merges file")->check(CLI::ExistingFile);
    ceval->add_option("--data", ev.data, "dataset TSV")->required()->check(CLI::ExistingFile);
    ceval->add_option("--dump", ev.dump, "write per-example predictions to this TSV");
    ceval->callback([&] {
        const fs::path run(ev.run);
        auto pick = [&](const std::string & given, const char * name) {
            if (!given.empty()) return given;
            if (ev.run.empty()) throw std::runtime_error(std::string("need --run or --") + name);
            return (run / name).string();
        };
        const std::string config = !ev.config.empty() ? ev.config
                                   : (ev.run.empty() ? std::string() : (run / "config.txt").string());
        const std::string ckpt   = pick(ev.checkpoint, "model.ckpt");
        const std::string vocab  = pick(ev.vocab, "vocab.tsv");
        const std::string merges = pick(ev.merges, "merges.tsv");
        if (config.empty()) throw std::runtime_error("need --run or --config");

        KvConfig       kv = load_config(config, ev.sets);
        TuningStrategy st = TuningStrategy::from_kv(kv);
        TrainConfig    tc = TrainConfig::from_kv(kv);
        ModelConfig    mc = ModelConfig::from_kv(kv);
        Tokenizer      tok = load_tokenizer(vocab, merges);
        if (mc.vocab_size == 0) mc.vocab_size = tok.vocab.size();
        mc.validate();
        kv.require_all_consumed();

        auto rows = read_dataset_tsv(ev.data);
        if (checkpoint_dtype(ckpt) == 8) run_evaluate<double>(ev, mc, st, tc, tok, rows, ckpt);
        else run_evaluate<float>(ev, mc, st, tc, tok, rows, ckpt);
    });

    // ---- search ----
    struct {
        LabArgs               lab;
        std::string           strategy = "prefix";
        bool                  low_data = false, sampled = false;
        int                   trials = 16, fixed_length = -1, max_epochs = 0, patience = 0;
        uint64_t              master_seed = 1;
        std::vector<uint64_t> seeds{ 1, 2, 3 };
    } se;
    auto * csearch = app.add_subcommand("search", "random hyperparameter search over the miniature study");
    csearch->add_option("--strategy", se.strategy, "full | top2 | bitfit | prefix | prefix+st (default prefix)");
    csearch->add_flag("--low-data", se.low_data, "adapt on the 10-SPIS covering sample");
    csearch->add_flag("--sampled", se.sampled, "sample the search space instead of the published trial tables");
    csearch->add_option("--trials", se.trials, "trial count for --sampled (default 16)");
    csearch->add_option("--master-seed", se.master_seed, "master seed for --sampled (default 1)");
    csearch->add_option("--fixed-length", se.fixed_length, "overwrite every trial's prefix length");
    csearch->add_option("--seeds", se.seeds, "training seeds per trial (default 1,2,3)")->delimiter(',');
    csearch->add_option("--run", se.lab.run, "run directory")->required();
    csearch->add_option("--base", se.lab.base, "pretrained base checkpoint (skips pretraining)")
        ->check(CLI::ExistingFile);
    csearch->add_option("--vocab", se.lab.vocab, "tokenizer vocab file")->check(CLI::ExistingFile);
    csearch->add_option("--merges", se.lab.merges, "tokenizer merges file")->check(CLI::ExistingFile);
    csearch->add_option("--corpus-seed", se.lab.corpus_seed, "corpus seed (default 7)");
    csearch->add_option("--pretrain-seed", se.lab.pretrain_seed, "pretraining seed (default 1)");
    csearch->add_option("--max-epochs", se.max_epochs, "cap epochs per run (default: family setting)");
    csearch->add_option("--patience", se.patience, "early-stopping patience (default: family setting)");
    csearch->callback([&] {
        const auto     t0 = std::chrono::steady_clock::now();
        const fs::path run(se.lab.run);
        fs::create_directories(run / "runs");

        const TuningStrategy chosen    = catalog_strategy(se.strategy);
        const bool           is_prefix = chosen.kind == TuningKind::prefix;
        if (se.fixed_length >= 0 && !is_prefix) throw std::runtime_error("--fixed-length needs a prefix strategy");

        std::vector<Trial> trials;
        if (se.sampled) {
            SearchSpace space;
            space.prefix_dims = is_prefix;
            space.trials      = se.trials;
            space.master_seed = se.master_seed;
            trials            = sample_trials(space);
        } else {
            trials = is_prefix ? prefix_trial_table() : generic_trial_table();
        }
        if (se.fixed_length >= 0) overwrite_prefix_length(trials, se.fixed_length);

        MiniLab lab = assemble_mini_lab(se.lab);
        const auto & rows = se.low_data ? lab.corpus.low_train : lab.corpus.train;

        TrialRunner runner = [&](const Trial & t, uint64_t seed) -> RunOutcome {
            TuningStrategy st = chosen;
            if (is_prefix && t.prefix_length >= 0) st.prefix.length = t.prefix_length;
            if (is_prefix && t.mid_dim > 0) st.prefix.mid_dim = t.mid_dim;
            TrainConfig tc = mini_tune_config(st, se.low_data, seed);
            tc.lr          = t.lr;
            tc.batch_size  = t.batch_size;
            if (se.max_epochs > 0) tc.max_epochs = se.max_epochs;
            if (se.patience > 0) tc.patience = se.patience;

            const std::string log_rel = trial_log_name(t, seed);
            std::ofstream     log(run / log_rel, std::ios::binary);
            MiniRunResult r = run_mini_strategy(lab.base, lab.cfg, lab.tok, st, tc, rows, lab.corpus.dev,
                                                lab.corpus.test, epoch_logger(log));
            return RunOutcome{ r.val_em, r.test_em, r.budget, log_rel };
        };

        SearchResult res = random_search(trials, se.seeds, runner);
        write_text_file(run / "records.jsonl", records_to_jsonl(res.records));
        write_text_file(run / "table.tsv", search_table_tsv(res.records));

        const Trial & w = trials[(size_t) res.winner];
        json manifest{ { "command", "search" },
                       { "strategy", se.strategy },
                       { "low_data", se.low_data },
                       { "trial_source", se.sampled ? "sampled" : "table" },
                       { "fixed_length", se.fixed_length },
                       { "seeds", se.seeds },
                       { "corpus_seed", se.lab.corpus_seed },
                       { "winner_index", res.winner },
                       { "winner",
                         json{ { "lr", w.lr },
                               { "batch_size", w.batch_size },
                               { "prefix_length", w.prefix_length },
                               { "mid_dim", w.mid_dim } } },
                       { "winner_val_em", res.winner_val_em },
                       { "winner_test_em", res.winner_test_em },
                       { "workers", worker_slots() },
                       { "wall_seconds", elapsed_seconds(t0) } };
        write_manifest(run, manifest);

        std::printf("%s\n", search_table_tsv(res.records).c_str());
        std::printf("winner: trial %d (lr %.4e, batch %d", res.winner, w.lr, w.batch_size);
        if (w.prefix_length >= 0) std::printf(", length %d, mid %d", w.prefix_length, w.mid_dim);
        std::printf(") mean val_em %.4f, mean test_em %.4f\n", res.winner_val_em, res.winner_test_em);
        std::printf("run directory: %s\n", run.string().c_str());
    });

    // ---- sweep ----
    struct {
        LabArgs               lab;
        std::vector<int>      lengths{ 0, 1, 5, 10, 20, 30 };
        std::vector<uint64_t> seeds{ 1, 2, 3 };
        bool                  low_data = false;
        double                lr       = 0;
        int                   mid_dim = 0, max_epochs = 0, patience = 0;
    } sw;
    auto * csweep = app.add_subcommand("sweep", "prefix-length sweep, with and without special tokens");
    csweep->add_option("--lengths", sw.lengths, "prefix lengths (default 0,1,5,10,20,30)")->delimiter(',');
    csweep->add_option("--seeds", sw.seeds, "seeds per point (default 1,2,3)")->delimiter(',');
    csweep->add_flag("--low-data", sw.low_data, "adapt on the 10-SPIS covering sample");
    csweep->add_option("--lr", sw.lr, "override the family learning rate");
    csweep->add_option("--mid-dim", sw.mid_dim, "override the bank mid width");
    csweep->add_option("--max-epochs", sw.max_epochs, "cap epochs per run");
    csweep->add_option("--patience", sw.patience, "early-stopping patience");
    csweep->add_option("--run", sw.lab.run, "run directory")->required();
    csweep->add_option("--base", sw.lab.base, "pretrained base checkpoint (skips pretraining)")
        ->check(CLI::ExistingFile);
    csweep->add_option("--vocab", sw.lab.vocab, "tokenizer vocab file")->check(CLI::ExistingFile);
    csweep->add_option("--merges", sw.lab.merges, "tokenizer merges file")->check(CLI::ExistingFile);
    csweep->add_option("--corpus-seed", sw.lab.corpus_seed, "corpus seed (default 7)");
    csweep->add_option("--pretrain-seed", sw.lab.pretrain_seed, "pretraining seed (default 1)");
    csweep->callback([&] {
        const auto     t0 = std::chrono::steady_clock::now();
        const fs::path run(sw.lab.run);
        fs::create_directories(run / "runs");

        MiniLab lab = assemble_mini_lab(sw.lab);
        const auto & rows = sw.low_data ? lab.corpus.low_train : lab.corpus.train;

        SweepRunner runner = [&](int length, bool special, uint64_t seed) -> double {
            TuningStrategy st = catalog_strategy(special ? "prefix+st" : "prefix");
            st.prefix.length  = length;
            if (sw.mid_dim > 0) st.prefix.mid_dim = sw.mid_dim;
            TrainConfig tc = mini_tune_config(st, sw.low_data, seed);
            if (sw.lr > 0) tc.lr = sw.lr;
            if (sw.max_epochs > 0) tc.max_epochs = sw.max_epochs;
            if (sw.patience > 0) tc.patience = sw.patience;

            char name[64];
            std::snprintf(name, sizeof name, "runs/len%d_%s_s%llu.tsv", length, special ? "special" : "plain",
                          (unsigned long long) seed);
            std::ofstream log(run / name, std::ios::binary);
            MiniRunResult r = run_mini_strategy(lab.base, lab.cfg, lab.tok, st, tc, rows, lab.corpus.dev,
                                                lab.corpus.test, epoch_logger(log));
            return r.test_em;
        };

        auto points = sweep_prefix_length(sw.lengths, sw.seeds, runner);
        write_text_file(run / "sweep.tsv", sweep_table_tsv(points));
        write_text_file(run / "sweep.svg", sweep_plot_svg(points));
        write_text_file(run / "sweep.txt", sweep_plot_ascii(points));

        json manifest{ { "command", "sweep" },       { "lengths", sw.lengths },
                       { "seeds", sw.seeds },        { "low_data", sw.low_data },
                       { "corpus_seed", sw.lab.corpus_seed }, { "workers", worker_slots() },
                       { "wall_seconds", elapsed_seconds(t0) } };
        write_manifest(run, manifest);

        std::printf("%s\n%s\n", sweep_table_tsv(points).c_str(), sweep_plot_ascii(points).c_str());
        std::printf("run directory: %s\n", run.string().c_str());
    });

    // ---- budget ----
    struct {
        std::string config;
        std::vector<std::string> sets;
        std::vector<int>         lengths{ 30, 5 };
        int                      labels = 51;
    } bu;
    auto * cbudget = app.add_subcommand("budget", "space-budget table for the tuning strategies");
    cbudget->add_option("--config", bu.config, "model config (default: the published reference dimensions)")
        ->check(CLI::ExistingFile);
    cbudget->add_option("--set", bu.sets, "config override, e.g. --set model.hid_dim=512");
    cbudget->add_option("--labels", bu.labels, "special label count for the † variants (default 51)");
    cbudget->add_option("--lengths", bu.lengths, "prefix lengths to include (default 30,5)")->delimiter(',');
    cbudget->callback([&] {
        ModelConfig cfg;
        if (bu.config.empty() && bu.sets.empty()) {
            cfg = reference_model_config();
        } else {
            KvConfig kv = load_config(bu.config, bu.sets);
            cfg         = ModelConfig::from_kv(kv);
            kv.require_all_consumed();
        }
        cfg.validate();

        std::vector<std::pair<std::string, TuningStrategy>> strategies;
        TuningStrategy full;
        strategies.push_back({ "full", full });
        TuningStrategy top2;
        top2.kind = TuningKind::partial;
        strategies.push_back({ "top2", top2 });
        TuningStrategy bitfit;
        bitfit.kind = TuningKind::bitfit;
        strategies.push_back({ "bitfit", bitfit });
        for (int len : bu.lengths) {
            TuningStrategy p;
            p.kind          = TuningKind::prefix;
            p.prefix.length = len;
            strategies.push_back({ "prefix" + std::to_string(len), p });
            if (bu.labels > 0) {
                p.special_tokens = true;
                strategies.push_back({ "+st prefix" + std::to_string(len), p });
            }
        }
        std::printf("%s", budget_table_text(cfg, strategies, bu.labels).c_str());
    });

    // ---- report ----
    struct {
        std::string records, out;
    } re;
    auto * creport = app.add_subcommand("report", "regenerate tables and the winner from archived run records");
    creport->add_option("--records", re.records, "records.jsonl from a search run")->required()
        ->check(CLI::ExistingFile);
    creport->add_option("--out", re.out, "directory for regenerated artifacts");
    creport->callback([&] {
        auto records = records_from_jsonl(read_text_file(re.records));
        const std::string table = search_table_tsv(records);
        std::printf("%s", table.c_str());

        json summary{ { "records", records.size() } };
        try {
            SearchResult res   = summarize_records(records);
            summary["winner_index"]   = res.winner;
            summary["winner_val_em"]  = res.winner_val_em;
            summary["winner_test_em"] = res.winner_test_em;
            std::printf("winner: trial %d, mean val_em %.4f, mean test_em %.4f\n", res.winner, res.winner_val_em,
                        res.winner_test_em);
        } catch (const HarnessError & e) {
            summary["winner_index"] = nullptr;
            std::printf("winner: none (%s)\n", e.what());
        }

        if (!re.out.empty()) {
            fs::create_directories(re.out);
            write_text_file(fs::path(re.out) / "table.tsv", table);
            write_text_file(fs::path(re.out) / "records.jsonl", records_to_jsonl(records));
            write_text_file(fs::path(re.out) / "summary.json", summary.dump(2) + "\n");
            std::printf("regenerated artifacts in %s\n", re.out.c_str());
        }
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError & e) {
        return app.exit(e);
    } catch (const std::exception & e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
