// skyladder: command-line front end for packing, schedules, training,
// evaluation and analysis.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "skyladder/skyladder.hpp"

namespace fs = std::filesystem;
using namespace skyladder;
using nlohmann::json;

namespace {

#ifndef SKYLADDER_VERSION
#define SKYLADDER_VERSION "dev"
#endif

struct Globals {
    std::string config_path;
    std::string out_dir;
    int threads = 0;
    std::vector<std::pair<std::string, std::string>> overrides;
};

/// Turns leftover "--section.field value" / "--section.field=value" arguments
/// into override pairs.
std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& extras) {
    std::vector<std::pair<std::string, std::string>> out;
    for (std::size_t i = 0; i < extras.size(); ++i) {
        const auto& arg = extras[i];
        if (!arg.starts_with("--") || arg.find('.') == std::string::npos) {
            throw ConfigError("unexpected argument '" + arg + "'");
        }
        auto eq = arg.find('=');
        if (eq != std::string::npos) {
            out.emplace_back(arg.substr(2, eq - 2), arg.substr(eq + 1));
        } else {
            if (i + 1 >= extras.size()) throw ConfigError("missing value for " + arg);
            out.emplace_back(arg.substr(2), extras[++i]);
        }
    }
    return out;
}

RunConfig resolve_config(const Globals& g, json* effective = nullptr) {
    json j = g.config_path.empty() ? json::object() : load_config_json(g.config_path);
    for (const auto& [key, value] : g.overrides) apply_override(j, key, value);
    auto cfg = from_json(j);
    if (effective) *effective = to_json(cfg);
    return cfg;
}

fs::path out_dir(const Globals& g) {
    fs::path dir = g.out_dir;
    if (dir.empty()) {
        const char* env = std::getenv("SKYLADDER_OUT");
        dir = env && *env ? env : ".";
    }
    fs::create_directories(dir);
    return dir;
}

/// Writes through a temporary file and renames, so readers never see a
/// half-written artifact.
template <typename Fn>
void write_atomically(const fs::path& path, Fn&& fill, std::ios::openmode mode = std::ios::binary) {
    auto tmp = path;
    tmp += ".partial";
    {
        std::ofstream out(tmp, mode);
        if (!out) throw InputError("cannot write " + tmp.string());
        fill(out);
        out.flush();
        if (!out) throw InputError("failed writing " + tmp.string());
    }
    fs::rename(tmp, path);
}

void write_manifest(const fs::path& path, const std::string& command, const json& config,
                    const std::vector<std::string>& inputs, const std::vector<fs::path>& artifacts, std::uint64_t seed) {
    json m;
    m["tool_version"] = SKYLADDER_VERSION;
    m["command"] = command;
    m["config"] = config;
    m["seed"] = seed;
    m["threads"] = num_threads();
    json digests = json::object();
    for (const auto& in : inputs) digests[in] = sha256_file(in);
    m["inputs"] = digests;
    json arts = json::array();
    for (const auto& a : artifacts) arts.push_back(a.string());
    m["artifacts"] = arts;
    write_atomically(path, [&](std::ostream& out) { out << m.dump(2) << '\n'; }, std::ios::out);
}

std::vector<Document> load_corpus(const std::string& path) {
    if (path.empty()) throw ConfigError("no corpus file given");
    std::ifstream in(path);
    if (!in) throw InputError("cannot open corpus " + path);
    return read_corpus_jsonl(in, ByteTokenizer{});
}

PackedDataset load_packed(const std::string& path) {
    if (path.empty()) throw ConfigError("no packed dataset given");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open packed dataset " + path);
    return read_packed_dataset(in);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open checkpoint " + path);
    return read_checkpoint<T>(in);
}

json histogram_json(const ContextHistogram& h) {
    json counts = json::array();
    for (std::size_t c = 1; c < h.counts.size(); ++c) counts.push_back(h.counts[c]);
    return counts;
}

// ---------------------------------------------------------------------------

int cmd_pack(const Globals& g, const std::string& corpus_flag, std::string output, std::string stats_path) {
    json effective;
    auto cfg = resolve_config(g, &effective);
    if (!corpus_flag.empty()) cfg.data.corpus = corpus_flag;
    effective["data"]["corpus"] = cfg.data.corpus;
    auto dir = out_dir(g);
    fs::path packed = output.empty() ? dir / "packed.bin" : fs::path(output);
    fs::path stats = stats_path.empty() ? dir / "pack_stats.json" : fs::path(stats_path);
    write_manifest(dir / "pack.manifest.json", "pack", effective, {cfg.data.corpus}, {packed, stats}, cfg.data.seed);

    const ByteTokenizer tok;
    auto docs = load_corpus(cfg.data.corpus);
    std::vector<PackedSequence> seqs;
    if (cfg.data.packing == "bm25") {
        auto index = Bm25Index::build(docs, word_terms(tok));
        seqs = pack_bm25(docs, index, cfg.data.seq_len, tok.eos(), cfg.data.seed);
    } else {
        seqs = pack_random(docs, cfg.data.seq_len, tok.eos(), cfg.data.seed);
    }
    write_atomically(packed, [&](std::ostream& out) { write_packed_dataset(out, cfg.data.seq_len, seqs); });

    std::size_t doc_tokens = 0;
    for (const auto& d : docs) doc_tokens += d.tokens.size();
    json s;
    s["documents"] = docs.size();
    s["document_tokens"] = doc_tokens;
    s["sequences"] = seqs.size();
    s["length"] = cfg.data.seq_len;
    s["tokens"] = seqs.size() * static_cast<std::size_t>(cfg.data.seq_len);
    s["packing"] = cfg.data.packing;
    s["seed"] = cfg.data.seed;
    s["histograms"] = {
        {"causal", histogram_json(context_window_histogram(seqs, MaskBase::causal_full, false, cfg.data.seq_len))},
        {"intradoc", histogram_json(context_window_histogram(seqs, MaskBase::causal_full, true, cfg.data.seq_len))},
    };
    write_atomically(stats, [&](std::ostream& out) { out << s.dump(2) << '\n'; }, std::ios::out);
    std::cerr << "packed " << docs.size() << " documents into " << seqs.size() << " sequences of " << cfg.data.seq_len
              << " tokens -> " << packed.string() << '\n';
    return 0;
}

int cmd_schedule(const Globals& g, const std::string& output, std::int64_t every) {
    auto cfg = resolve_config(g);
    cfg.schedule.validate();
    if (every < 1) throw ConfigError("--every must be >= 1");
    auto emit = [&](std::ostream& out) {
        out << "step,window\n";
        for (std::int64_t t = 0; t < cfg.schedule.total_steps; t += every) out << t << ',' << window_at(cfg.schedule, t) << '\n';
    };
    if (output.empty() || output == "-") {
        emit(std::cout);
    } else {
        write_atomically(output, emit, std::ios::out);
    }
    return 0;
}

int cmd_train(const Globals& g, const std::string& packed_flag, const std::string& dtype) {
    json effective;
    auto cfg = resolve_config(g, &effective);
    if (!packed_flag.empty()) cfg.data.packed = packed_flag;
    effective["data"]["packed"] = cfg.data.packed;
    if (dtype != "f32" && dtype != "f64") throw ConfigError("--dtype must be f32 or f64");
    auto dir = out_dir(g);
    const fs::path log_path = dir / "run_log.csv";
    const fs::path ckpt_path = dir / "model.clmd";
    const fs::path summary_path = dir / "train_summary.json";
    write_manifest(dir / "train.manifest.json", "train", effective, {cfg.data.packed}, {log_path, ckpt_path, summary_path},
                   cfg.train.seed);

    auto data = load_packed(cfg.data.packed);
    if (data.length != cfg.data.seq_len) {
        throw ConfigError("packed dataset has L=" + std::to_string(data.length) + " but data.seq_len=" +
                          std::to_string(cfg.data.seq_len));
    }
    MaskMode mode = cfg.mask_mode();
    auto tmp_log = log_path;
    tmp_log += ".partial";
    std::ofstream log(tmp_log);
    if (!log) throw InputError("cannot write " + tmp_log.string());
    RunOptions opts;
    opts.log_csv = &log;
    RunResult<float> result;
    try {
        result = run<float>(cfg.model, cfg.train, cfg.schedule, data, mode, opts);
    } catch (const NumericalError& e) {
        log.close();
        std::cerr << "error: " << e.what() << " (partial log kept at " << tmp_log.string() << ")\n";
        return 4;
    }
    log.close();
    fs::rename(tmp_log, log_path);
    write_atomically(ckpt_path, [&](std::ostream& out) {
        if (dtype == "f64") {
            write_checkpoint<double>(out, cfg.model, result.state.params);
        } else {
            write_checkpoint<float>(out, cfg.model, result.state.params);
        }
    });

    std::int64_t attended = 0;
    for (const auto& r : result.log.records) attended += r.attended;
    json summary;
    summary["steps"] = result.log.records.size();
    summary["final_loss"] = result.log.records.empty() ? 0.0 : result.log.records.back().loss;
    summary["stream_digest"] = result.log.stream_digest;
    summary["attended_pairs"] = attended;
    summary["checkpoint_sha256"] = sha256_file(ckpt_path.string());
    write_atomically(summary_path, [&](std::ostream& out) { out << summary.dump(2) << '\n'; }, std::ios::out);
    std::cerr << "trained " << result.log.records.size() << " steps, final loss " << summary["final_loss"].get<double>()
              << " -> " << ckpt_path.string() << '\n';
    return 0;
}

int cmd_eval(const Globals& g, const std::string& checkpoint, const std::string& validation_flag,
             std::int64_t window_flag, std::int64_t stride_flag) {
    auto cfg = resolve_config(g);
    if (!validation_flag.empty()) cfg.data.validation = validation_flag;
    if (window_flag > 0) cfg.eval.window = window_flag;
    if (stride_flag >= 0) cfg.eval.stride = stride_flag;
    auto ck = load_checkpoint<double>(checkpoint);
    auto docs = load_corpus(cfg.data.validation);
    TransformerLM<double> model(ck.config, std::move(ck.params));
    auto res = sliding_ppl(model, docs, cfg.eval);
    std::cout << "window,tokens,nll,ppl\n";
    std::cout.precision(12);
    std::cout << res.window << ',' << res.tokens << ',' << res.mean_nll() << ',' << res.ppl() << '\n';
    return 0;
}

int cmd_analyze(const Globals& g, const std::string& log_path, const std::string& checkpoint, std::string probe,
                std::size_t probe_index, std::size_t vol_window, double epsilon) {
    auto cfg = resolve_config(g);
    auto dir = out_dir(g);
    std::ifstream in(log_path);
    if (!in) throw InputError("cannot open run log " + log_path);
    auto log = RunLog::read_csv(in);
    auto losses = log.losses();
    auto grads = log.grad_norms();

    std::vector<std::pair<std::string, double>> metrics = {
        {"volatility", volatility(losses, vol_window)},
        {"smoothness", smoothness(losses)},
        {"mean_loss_ratio", mean_loss_ratio(losses)},
        {"avg_grad_norm", avg_grad_norm(grads)},
    };

    if (!checkpoint.empty()) {
        if (probe.empty()) probe = cfg.data.packed;
        auto data = load_packed(probe);
        if (probe_index >= data.sequences.size()) throw InputError("probe index beyond the dataset");
        const auto& seq = data.sequences[probe_index];
        auto ck = load_checkpoint<double>(checkpoint);
        auto docs = interior_boundaries(seq.doc_boundaries, data.length);
        MaskMode mode{MaskBase::causal_full, cfg.data.intradoc, data.length};
        auto seg = mode_segments(mode, data.length, docs);
        auto positions = stacked_positions(data.length, data.length);
        auto trace = forward(ck.params, ck.config, std::span<const TokenId>(seq.tokens), std::span<const Offset>(positions),
                             AttentionLayout::from_segments(seg));
        auto snap = snapshot_attention(trace, ck.config);
        metrics.emplace_back("attention_entropy", attention_entropy(snap));
        metrics.emplace_back("attention_sink", attention_sink(snap, epsilon));
        metrics.emplace_back("max_attention_logit", max_attention_logit(snap));
        write_atomically(dir / "attention_layers.csv", [&](std::ostream& out) {
            out << "layer,head,entropy,sink,max_logit\n";
            out.precision(12);
            for (const auto& s : per_head_stats(snap, epsilon)) {
                out << s.layer << ',' << s.head << ',' << s.entropy << ',' << s.sink << ',' << s.max_logit << '\n';
            }
        }, std::ios::out);
        write_atomically(dir / "probe_segments.json", [&](std::ostream& out) {
            out << json{{"cu_seqlens", seg.cu_seqlens}, {"max_seqlen", seg.max_seqlen}}.dump() << '\n';
        }, std::ios::out);
    }

    auto emit = [&](std::ostream& out) {
        out << "metric,value\n";
        out.precision(12);
        for (const auto& [name, value] : metrics) out << name << ',' << value << '\n';
    };
    write_atomically(dir / "stability.csv", emit, std::ios::out);
    emit(std::cout);
    return 0;
}

int cmd_flops(const Globals& g, const std::string& preset, const std::string& accounting, std::string output) {
    auto cfg = resolve_config(g);
    FlopsShape shape;
    if (preset == "tinyllama-1b") {
        shape = FlopsShape{};
    } else if (preset.empty() || preset == "model") {
        shape = FlopsShape::from_model(cfg.model);
    } else {
        throw ConfigError("unknown preset '" + preset + "'");
    }
    auto rep = flops_report(shape, cfg.schedule, cfg.train.total_steps, cfg.train.batch_tokens,
                            parse_flops_accounting(accounting));
    if (output.empty()) output = (out_dir(g) / "flops.csv").string();
    if (output == "-") {
        rep.write_csv(std::cout);
    } else {
        write_atomically(output, [&](std::ostream& out) { rep.write_csv(out); }, std::ios::out);
        std::cout << "metric,value\n";
        std::cout.precision(12);
        std::cout << "total_flops_sched," << rep.total_sched << '\n'
                  << "total_flops_const," << rep.total_const << '\n'
                  << "saving," << rep.saving() << '\n'
                  << "attention_saving," << rep.attention_saving() << '\n';
    }
    return 0;
}

int cmd_gradcheck(bool no_rope, bool intradoc, const std::string& mask, std::int64_t window, double tolerance,
                  std::uint64_t seed, const std::string& corrupt) {
    auto prob = toy_gradcheck_problem(!no_rope, intradoc, parse_mask_base(mask), window);
    auto params = gradcheck_parameters(prob.config, seed);
    GradientFn grad = analytic_gradient;
    if (!corrupt.empty()) {
        bool found = false;
        for (const auto& v : params.views()) found = found || v.name == corrupt;
        if (!found) throw ConfigError("no tensor named '" + corrupt + "'");
        // Test fixture: a backward pass that is wrong by 1% on one tensor.
        grad = [corrupt](const Parameters<double>& p, const GradcheckProblem& pr) {
            auto g = analytic_gradient(p, pr);
            for (auto& v : g.views()) {
                if (v.name != corrupt) continue;
                for (auto& x : v.values()) x *= 1.01;
            }
            return g;
        };
    }
    std::cout << "parameters " << params.count() << '\n';
    auto rep = gradcheck(params, prob, 1e-5, tolerance, 1e-4, grad);
    std::cout << "tensor,max_rel_error\n";
    std::cout.precision(6);
    std::vector<std::string> bad;
    for (const auto& t : rep.tensors) {
        std::cout << t.name << ',' << std::scientific << t.max_rel_error << std::defaultfloat << '\n';
        if (t.max_rel_error > tolerance) bad.push_back(t.name);
    }
    if (bad.empty()) {
        std::cout << "PASS worst " << rep.worst() << '\n';
        return 0;
    }
    std::cout << "FAIL";
    for (const auto& b : bad) std::cout << ' ' << b;
    std::cout << '\n';
    return 1;
}

int cmd_mask_dump(const std::string& base, std::int64_t length, std::int64_t w, const std::string& docs_text,
                  bool intradoc, bool segments) {
    std::vector<Offset> docs;
    std::stringstream ss(docs_text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        if (part.empty()) continue;
        try {
            docs.push_back(std::stoll(part));
        } catch (...) {
            throw InputError("bad document boundary '" + part + "'");
        }
    }
    MaskMode mode{parse_mask_base(base), intradoc, w};
    mode.validate();
    if (length < 1) throw InputError("--length must be >= 1");
    validate_doc_boundaries(length, docs);
    if (segments) {
        if (!mode.is_block()) throw InputError("sliding windows have no segment form");
        auto seg = mode_segments(mode, length, docs);
        std::cout << json{{"cu_seqlens", seg.cu_seqlens}, {"max_seqlen", seg.max_seqlen}}.dump() << '\n';
        return 0;
    }
    std::cout << render_mask(dense_mask(mode, length, docs));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    skyladder::retain_large_allocations();
    CLI::App app{"Context-window scheduling lab"};
    app.require_subcommand(1);
    app.allow_extras();
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config_path, "JSON run configuration");
    app.add_option("--out", g.out_dir, "Output directory (default: $SKYLADDER_OUT or .)");
    app.add_option("--threads", g.threads, "Worker threads (default: $SKYLADDER_THREADS or 1)");

    auto* pack = app.add_subcommand("pack", "Pack a JSONL corpus into fixed-length sequences");
    std::string corpus, pack_output, pack_stats;
    pack->add_option("--corpus", corpus, "Corpus file (overrides data.corpus)");
    pack->add_option("--output", pack_output, "Packed dataset path");
    pack->add_option("--stats", pack_stats, "Statistics JSON path");

    auto* sched = app.add_subcommand("schedule", "Print the context-window schedule as CSV");
    std::string sched_output;
    std::int64_t every = 1;
    sched->add_option("--output", sched_output, "CSV path (default: stdout)");
    sched->add_option("--every", every, "Emit every n-th step");

    auto* train = app.add_subcommand("train", "Train the model on a packed dataset");
    std::string packed, dtype = "f32";
    train->add_option("--packed", packed, "Packed dataset (overrides data.packed)");
    train->add_option("--dtype", dtype, "Checkpoint precision: f32 or f64");

    auto* eval = app.add_subcommand("eval", "Sliding-window validation perplexity");
    std::string eval_ckpt, validation;
    std::int64_t eval_window = 0, eval_stride = -1;
    eval->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->required();
    eval->add_option("--validation", validation, "Validation JSONL (overrides data.validation)");
    eval->add_option("--window", eval_window, "Evaluation window (overrides eval.window)");
    eval->add_option("--stride", eval_stride, "Stride; 0 means the window size (overrides eval.stride)");

    auto* analyze = app.add_subcommand("analyze", "Stability metrics and attention diagnostics");
    std::string an_log, an_ckpt, probe;
    std::size_t probe_index = 0, vol_window = 10;
    double epsilon = 0.3;
    analyze->add_option("--log", an_log, "Run log CSV")->required();
    analyze->add_option("--checkpoint", an_ckpt, "Checkpoint for attention probes");
    analyze->add_option("--probe", probe, "Packed dataset holding the probe sequence");
    analyze->add_option("--probe-index", probe_index, "Probe sequence index");
    analyze->add_option("--volatility-window", vol_window, "Trailing window for volatility");
    analyze->add_option("--sink-epsilon", epsilon, "Attention-sink threshold");

    auto* flops = app.add_subcommand("flops", "Compare training compute with a constant schedule");
    std::string preset, accounting = "causal_pairs", flops_output;
    flops->add_option("--preset", preset, "Shape preset: model (default) or tinyllama-1b");
    flops->add_option("--accounting", accounting, "causal_pairs (default) or dense_blocks");
    flops->add_option("--output", flops_output, "CSV path, '-' for stdout");

    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient check on a toy model");
    bool no_rope = false, gc_intradoc = false;
    std::string gc_mask = "local_causal", corrupt;
    std::int64_t gc_window = 4;
    double tolerance = 1e-5;
    std::uint64_t gc_seed = 7;
    gc->add_flag("--no-rope", no_rope, "Disable RoPE");
    gc->add_flag("--intradoc", gc_intradoc, "Mask across document boundaries");
    gc->add_option("--mask", gc_mask, "causal_full, local_causal or sliding_window");
    gc->add_option("--window", gc_window, "Mask window");
    gc->add_option("--tolerance", tolerance, "Maximum relative error");
    gc->add_option("--seed", gc_seed, "Initialisation seed");
    gc->add_option("--corrupt", corrupt, "Perturb one tensor's analytic gradient (self-test)");

    auto* mask = app.add_subcommand("mask", "Mask utilities");
    mask->require_subcommand(1);
    auto* dump = mask->add_subcommand("dump", "Render a mask as a 0/1 grid");
    std::string base = "local_causal", docs;
    std::int64_t length = 8, w = 4;
    bool dump_intradoc = false, segments = false;
    dump->add_option("--base", base, "causal_full, local_causal or sliding_window");
    dump->add_option("--length", length, "Sequence length L");
    dump->add_option("--w", w, "Window");
    dump->add_option("--docs", docs, "Comma-separated interior document boundaries");
    dump->add_flag("--intradoc", dump_intradoc, "Restrict attention to the same document");
    dump->add_flag("--segments", segments, "Print cu_seqlens JSON instead of the grid");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        std::vector<std::string> extras = app.remaining();
        for (auto* sub : app.get_subcommands()) {
            auto more = sub->remaining();
            extras.insert(extras.end(), more.begin(), more.end());
        }
        g.overrides = parse_overrides(extras);
        if (g.threads > 0) set_num_threads(g.threads);

        if (*pack) return cmd_pack(g, corpus, pack_output, pack_stats);
        if (*sched) return cmd_schedule(g, sched_output, every);
        if (*train) return cmd_train(g, packed, dtype);
        if (*eval) return cmd_eval(g, eval_ckpt, validation, eval_window, eval_stride);
        if (*analyze) return cmd_analyze(g, an_log, an_ckpt, probe, probe_index, vol_window, epsilon);
        if (*flops) return cmd_flops(g, preset, accounting, flops_output);
        if (*gc) return cmd_gradcheck(no_rope, gc_intradoc, gc_mask, gc_window, tolerance, gc_seed, corrupt);
        if (*dump) return cmd_mask_dump(base, length, w, docs, dump_intradoc, segments);
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return 2;
    } catch (const DataValidationError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return 3;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
