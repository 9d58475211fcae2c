// SPDX-License-Identifier: Apache-2.0
#include "locas/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "locas/checkpoint.hpp"
#include "locas/config.hpp"
#include "locas/corpus.hpp"
#include "locas/errors.hpp"
#include "locas/harness.hpp"
#include "locas/nlsvd.hpp"
#include "locas/trainer.hpp"

namespace locas::cli {

namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config;
    std::string out_dir = ".";
    std::string backbone;
    std::string input;
    std::map<std::string, std::string> overrides;
    std::vector<std::string> sets;
    bool deterministic = false;
};

void add_key(CLI::App* app, Common& c, const std::string& flag, const std::string& key, const std::string& help) {
    app->add_option_function<std::string>(
        flag, [&c, key](const std::string& v) { c.overrides[key] = v; }, help + " (" + key + ")");
}

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "Settings file (key = value with [section] headers)");
    add_key(app, c, "--seed", "seed", "Seed for all randomness");
    app->add_flag("--deterministic", c.deterministic, "Deterministic mode (always on; recorded in the snapshot)");
    app->add_option("--out", c.out_dir, "Output directory");
    app->add_option("--set", c.sets, "Extra key=value overrides");
}

void add_model_keys(CLI::App* app, Common& c) {
    add_key(app, c, "--L,--layers", "model.layers", "Layer count");
    add_key(app, c, "--d,--hidden", "model.hidden", "Hidden size");
    add_key(app, c, "--m,--intermediate", "model.intermediate", "FFN width");
    add_key(app, c, "--heads", "model.heads", "Attention heads");
    add_key(app, c, "--ffn-kind", "model.ffn_kind", "mlp|glu");
    add_key(app, c, "--max-seq", "model.max_seq", "Positional limit");
}

void add_run_keys(CLI::App* app, Common& c) {
    add_key(app, c, "--method", "run.method", "trunc|locas-mlp|locas-glu|lowrank-baseline");
    add_key(app, c, "--strategy", "run.strategy", "topk|bottomk|random-selection|gaussian|normalized-activation");
    add_key(app, c, "--r", "run.r", "Memory width or adapter rank");
    add_key(app, c, "--lr", "run.lr", "Test-time learning rate");
    add_key(app, c, "--steps-per-chunk", "run.steps_per_chunk", "Updates per chunk");
    add_key(app, c, "--optimizer", "run.optimizer", "sgd|adam");
    add_key(app, c, "--epsilon", "run.epsilon", "Slot value scale");
    add_key(app, c, "--chunk-size", "run.chunk_size", "Tokens per chunk");
    add_key(app, c, "--window", "run.window", "Attention span when scoring");
    add_key(app, c, "--checkpoint-every", "run.checkpoint_every", "Tokens between records");
    add_key(app, c, "--n-docs", "corpus.n_docs", "Synthetic documents");
    add_key(app, c, "--doc-len", "corpus.doc_len", "Tokens per synthetic document");
    add_key(app, c, "--corpus-seed", "corpus.seed", "Synthetic corpus seed");
}

Settings resolve(const Common& c) {
    Settings s;
    if (!c.config.empty()) s.load_file(c.config);
    for (const auto& kv : c.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        s.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    for (const auto& [k, v] : c.overrides) s.set(k, v);
    if (c.deterministic) s.set("deterministic", "true");
    return s;
}

fs::path prepare_out(const Common& c, const Settings& s) {
    const fs::path dir(c.out_dir);
    fs::create_directories(dir);
    std::ofstream snap(dir / "resolved_config.ini");
    snap << s.dump();
    if (!snap) throw FormatError("cannot write " + (dir / "resolved_config.ini").string());
    return dir;
}

Backbone need_backbone(const Common& c) {
    if (c.backbone.empty()) throw ConfigError("--backbone is required");
    return load_checkpoint(c.backbone);
}

// Documents to evaluate: the --input text file, or the synthetic corpus.
std::vector<std::vector<int>> documents(const Common& c, const Settings& s) {
    if (!c.input.empty()) {
        std::ifstream in(c.input, std::ios::binary);
        if (!in) throw ConfigError("cannot read input " + c.input);
        std::stringstream ss;
        ss << in.rdbuf();
        return {encode_bytes(ss.str())};
    }
    CorpusOptions o;
    o.seed = static_cast<std::uint64_t>(s.get_int("corpus.seed"));
    o.n_docs = static_cast<int>(s.get_int("corpus.n_docs"));
    o.doc_len = static_cast<int>(s.get_int("corpus.doc_len"));
    o.vocab_skew = s.get_double("corpus.vocab_skew");
    return make_synthetic_corpus(o).documents;
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Locas: sideway parametric memory for test-time training", "locas"};
    app.require_subcommand(1);

    Common c;
    std::string strategies = "topk,bottomk,random-selection,gaussian,normalized-activation";
    std::string widths = "4,8,16,32";

    auto* gen = app.add_subcommand("gen-corpus", "Write the synthetic corpus as text files");
    add_common(gen, c);
    add_key(gen, c, "--n-docs", "corpus.n_docs", "Documents");
    add_key(gen, c, "--doc-len", "corpus.doc_len", "Tokens per document");
    add_key(gen, c, "--corpus-seed", "corpus.seed", "Corpus seed");

    auto* train = app.add_subcommand("train-backbone", "Pretrain a tiny backbone on the synthetic corpus");
    add_common(train, c);
    add_model_keys(train, c);
    add_key(train, c, "--steps", "train.steps", "Optimizer steps");
    add_key(train, c, "--train-lr", "train.lr", "Peak learning rate");
    add_key(train, c, "--seq-len", "train.seq_len", "Training window");
    add_key(train, c, "--batch", "train.batch", "Windows per step");

    auto* memorize = app.add_subcommand("memorize", "Stream a document through a TTT method and save the memory");
    auto* eval = app.add_subcommand("eval", "Streaming evaluation; writes eval.csv");
    auto* ablate = app.add_subcommand("ablate-init", "Compare initialization strategies");
    auto* sweep = app.add_subcommand("sweep-width", "Compare memory widths");
    for (auto* sub : {memorize, eval, ablate, sweep}) {
        add_common(sub, c);
        add_run_keys(sub, c);
        sub->add_option("--backbone", c.backbone, "Backbone checkpoint")->required();
        sub->add_option("--input", c.input, "Text document instead of the synthetic corpus");
    }
    ablate->add_option("--strategies", strategies, "Comma-separated strategies");
    sweep->add_option("--r-values", widths, "Comma-separated widths");

    auto* compress = app.add_subcommand("compress", "Expansion-compression cycle on a Locas-MLP memory");
    add_common(compress, c);
    add_model_keys(compress, c);
    compress->add_option("--backbone", c.backbone, "MLP backbone checkpoint (default: untrained, from --seed)");
    compress->add_option("--input", c.input, "Text document instead of the synthetic corpus");
    add_key(compress, c, "--capacity", "cycle.capacity", "Appends per span");
    add_key(compress, c, "--n-target", "cycle.n_target", "Rank after compression");
    add_key(compress, c, "--cadence", "cycle.cadence", "per-token|per-span");
    add_key(compress, c, "--tokens", "cycle.tokens", "Tokens to memorize");
    add_key(compress, c, "--epsilon", "run.epsilon", "Slot value scale");

    auto* count = app.add_subcommand("param-count", "Extra parameters added by a method");
    add_common(count, c);
    add_model_keys(count, c);
    add_key(count, c, "--r", "run.r", "Memory width or adapter rank");
    add_key(count, c, "--method", "run.method", "trunc|locas-mlp|locas-glu|lowrank-baseline");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n" << app.help();
        return 2;
    }

    try {
        const Settings s = resolve(c);
        if (count->parsed()) {
            out << param_count(s.model(), parse_method(s.get("run.method")),
                               static_cast<std::uint64_t>(s.get_int("run.r")))
                << '\n';
            return 0;
        }
        const fs::path dir = prepare_out(c, s);

        if (gen->parsed()) {
            CorpusOptions o;
            o.seed = static_cast<std::uint64_t>(s.get_int("corpus.seed"));
            o.n_docs = static_cast<int>(s.get_int("corpus.n_docs"));
            o.doc_len = static_cast<int>(s.get_int("corpus.doc_len"));
            o.vocab_skew = s.get_double("corpus.vocab_skew");
            const SyntheticCorpus corpus = make_synthetic_corpus(o);
            std::ofstream ents(dir / "entities.tsv");
            for (std::size_t d = 0; d < corpus.texts.size(); ++d) {
                char name[32];
                std::snprintf(name, sizeof name, "doc_%03zu.txt", d);
                std::ofstream(dir / name, std::ios::binary) << corpus.texts[d];
                for (const auto& e : corpus.entities[d]) {
                    ents << d << '\t' << e << '\t' << count_occurrences(corpus.texts[d], e) << '\n';
                }
            }
            out << "wrote " << corpus.texts.size() << " documents to " << dir.string() << '\n';
            return 0;
        }

        if (train->parsed()) {
            CorpusOptions o;
            o.seed = static_cast<std::uint64_t>(s.get_int("train.corpus_seed"));
            o.n_docs = static_cast<int>(s.get_int("train.n_docs"));
            o.doc_len = static_cast<int>(s.get_int("train.doc_len"));
            o.vocab_skew = s.get_double("corpus.vocab_skew");
            TrainOptions t = s.train();
            t.on_step = [&out](int step, double loss) {
                if (step % 100 == 0) out << "step " << step << " loss " << format_float(loss) << '\n';
            };
            const TrainResult r = train_tiny_backbone(make_synthetic_corpus(o).documents, s.model(), t);
            save_checkpoint(r.backbone, dir / "backbone.bin");
            std::ofstream curve(dir / "train_loss.csv");
            curve << "step,loss\n";
            for (std::size_t i = 0; i < r.loss_curve.size(); ++i) curve << i << ',' << format_float(r.loss_curve[i]) << '\n';
            out << "wrote " << (dir / "backbone.bin").string() << '\n';
            return 0;
        }

        if (compress->parsed()) {
            const Backbone b = c.backbone.empty() ? init_backbone(s.model(), static_cast<std::uint64_t>(s.get_int("seed")))
                                                  : load_checkpoint(c.backbone);
            auto doc = documents(c, s).front();
            const auto n = static_cast<std::size_t>(s.get_int("cycle.tokens"));
            if (doc.size() > n) doc.resize(n);
            MlpMemory mem = empty_mlp_memory(b.config, s.get_double("run.epsilon"));
            const CycleLog log = run_expansion_compression_cycle(b, mem, doc, s.cycle());
            std::ofstream jl(dir / "compression.jsonl");
            for (const auto& e : log.compressions) write_report_line(jl, e.report, e.token, e.layer);
            save_memory(mem, dir / "memory.bin");
            out << "tokens " << doc.size() << " compressions " << log.compressions.size() / mem.layers.size()
                << " final_width " << mem.width() << '\n';
            return 0;
        }

        const Backbone b = need_backbone(c);
        const RunConfig run = s.run();
        const auto docs = documents(c, s);

        if (eval->parsed() || memorize->parsed()) {
            std::ofstream csv(dir / "eval.csv", std::ios::binary);
            write_csv_header(csv);
            for (std::size_t d = 0; d < docs.size(); ++d) {
                const StreamResult r = stream_eval(b, run, docs[d], static_cast<int>(d));
                write_csv(csv, r.records);
                out << "doc " << d << " final_quarter_nll " << format_float(final_quarter_nll(r.token_nll)) << '\n';
                if (memorize->parsed()) {
                    char name[32];
                    std::snprintf(name, sizeof name, "memory_%03zu.bin", d);
                    if (run.method == Method::locas_glu) save_memory(r.glu_memory, dir / name);
                    else if (run.method == Method::locas_mlp) save_memory(r.mlp_memory, dir / name);
                    else throw ConfigError("memorize needs --method locas-glu or locas-mlp");
                }
            }
            return 0;
        }

        if (ablate->parsed()) {
            std::vector<InitStrategy> list;
            for (const auto& name : split_list(strategies)) list.push_back(parse_init_strategy(name));
            std::ofstream csv(dir / "ablate_init.csv", std::ios::binary);
            csv << "doc_id,strategy,final_nll,rank\n";
            for (std::size_t d = 0; d < docs.size(); ++d) {
                std::vector<AblationRow> rows;
                for (InitStrategy st : list) {
                    // normalized-activation keeps its own default rate unless --lr was given.
                    RunConfig r = run;
                    if (st == InitStrategy::normalized_activation && !s.explicitly_set("run.lr")) r.lr = 1e-6;
                    rows.push_back(ablate_init(b, docs[d], {st}, r).front());
                }
                std::vector<std::size_t> order(rows.size());
                for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
                std::stable_sort(order.begin(), order.end(),
                                 [&](std::size_t x, std::size_t y) { return rows[x].final_nll < rows[y].final_nll; });
                for (std::size_t k = 0; k < order.size(); ++k) rows[order[k]].rank = static_cast<int>(k) + 1;
                for (const auto& row : rows) {
                    csv << d << ',' << to_string(row.strategy) << ',' << format_float(row.final_nll) << ','
                        << row.rank << '\n';
                    out << "doc " << d << ' ' << to_string(row.strategy) << ' ' << format_float(row.final_nll)
                        << " rank " << row.rank << '\n';
                }
            }
            return 0;
        }

        if (sweep->parsed()) {
            std::vector<std::size_t> rs;
            for (const auto& v : split_list(widths)) rs.push_back(static_cast<std::size_t>(std::stoull(v)));
            std::ofstream csv(dir / "sweep_width.csv", std::ios::binary);
            csv << "doc_id,r,params,final_nll\n";
            for (std::size_t d = 0; d < docs.size(); ++d) {
                for (const auto& row : sweep_width(b, docs[d], rs, run)) {
                    csv << d << ',' << row.r << ',' << row.params << ',' << format_float(row.final_nll) << '\n';
                    out << "doc " << d << " r " << row.r << " params " << row.params << " final_nll "
                        << format_float(row.final_nll) << '\n';
                }
            }
            return 0;
        }
    } catch (const Error& e) {
        err << "error: " << e.category() << ": " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

}  // namespace locas::cli
