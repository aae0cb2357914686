// seic: two-stage deep image clustering over frozen encoder embeddings.
// Subcommands: synth, pairgen, align, enhance, evaluate, report.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include <CLI11.hpp>

#include "seic/config.hpp"
#include "seic/embedding.hpp"
#include "seic/heads.hpp"
#include "seic/metrics.hpp"
#include "seic/pairgen.hpp"
#include "seic/stub_encoder.hpp"
#include "seic/synth.hpp"
#include "seic/trainer.hpp"

namespace fs = std::filesystem;
using seic::json;

namespace {

void apply_extras(json& cfg, const std::vector<std::string>& extras) {
    for (size_t i = 0; i < extras.size(); ++i) {
        std::string tok = extras[i];
        if (tok.rfind("--", 0) != 0) throw seic::ConfigError("unexpected argument: " + tok);
        tok = tok.substr(2);
        std::string key, value;
        auto eq = tok.find('=');
        if (eq != std::string::npos) {
            key = tok.substr(0, eq);
            value = tok.substr(eq + 1);
        } else {
            key = tok;
            if (i + 1 >= extras.size()) throw seic::ConfigError("missing value for override --" + key);
            value = extras[++i];
        }
        seic::apply_override(cfg, key, value);
    }
}

std::string out_path(const json& cfg, const std::string& name) {
    fs::path dir = cfg.at("paths").at("out_dir").get<std::string>();
    fs::create_directories(dir);
    return (dir / name).string();
}

seic::Matrix normalized_data(const seic::EmbeddingMatrix& m) { return seic::normalize_rows(m).data; }

std::vector<int> maybe_truth(const json& cfg) {
    std::string p = cfg.at("paths").at("labels");
    if (p.empty()) return {};
    return seic::read_labels(p);
}

seic::StubVisionEncoder stub_from_config(const json& cfg, int D) {
    const auto& e = cfg.at("encoder");
    return seic::StubVisionEncoder::make(D, e.at("blocks"), e.at("stub_seed").get<uint64_t>(), e.at("mix"));
}

void print_metrics(const seic::ClusteringReport& r) {
    std::cout << std::fixed << std::setprecision(3);
    if (r.acc >= 0)
        std::cout << "acc " << r.acc << "  nmi " << r.nmi << "  ari " << r.ari << "\n";
    std::cout << "hist_std " << r.hist_std << "\n";
}

void write_report(const seic::ClusteringReport& r, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw seic::IoError("cannot write report: " + path);
    os << r.to_json().dump(2) << "\n";
}

int cmd_synth(const json& cfg) {
    auto sc = seic::synth_config_from_json(cfg);
    auto data = seic::make_synthetic_mixture(sc);
    seic::write_embeddings(data.embeddings, out_path(cfg, "synth.emb"));
    seic::write_labels(data.labels, out_path(cfg, "labels.txt"));
    std::cout << "synth: N=" << sc.N << " D=" << sc.D << " K=" << sc.K << " separation>=" << sc.separation_deg
              << "deg imbalance=" << sc.imbalance << " -> " << out_path(cfg, "synth.emb") << "\n";
    return 0;
}

int cmd_pairgen(const json& cfg) {
    auto pc = seic::pairgen_config_from_json(cfg);
    auto V = seic::normalize_rows(seic::read_embeddings(cfg.at("paths").at("embeddings")));
    seic::NounVocabulary vocab;
    vocab.nouns = seic::read_noun_list(cfg.at("paths").at("nouns"));
    std::string nemb = cfg.at("paths").at("noun_embeddings");
    if (!nemb.empty()) {
        vocab.embeddings = seic::normalize_rows(seic::read_embeddings(nemb));
    } else {
        // no pretrained text encoder available: deterministic hash stub
        vocab.embeddings.data = seic::hash_encode(vocab.nouns, V.dim());
        vocab.embeddings.ids = vocab.nouns;
        vocab.embeddings.normalized = true;
    }
    auto pairs = seic::generate_pairs(V, vocab, pc);
    seic::write_embeddings(pairs.image, out_path(cfg, "pairs_image.emb"));
    seic::write_embeddings(pairs.text, out_path(cfg, "pairs_text.emb"));
    json sidecar;
    sidecar["candidate_indices"] = pairs.candidate_indices;
    std::ofstream os(out_path(cfg, "candidates.json"));
    os << sidecar.dump(2) << "\n";
    std::cout << "pairgen: candidate subset size " << pairs.candidate_indices.size() << "\n";
    return 0;
}

int cmd_align(const json& cfg) {
    auto tc = seic::train_config_from_json(cfg);
    auto V = seic::normalize_rows(seic::read_embeddings(cfg.at("paths").at("embeddings")));
    seic::Matrix Vm = V.data;
    if (cfg.at("encoder").at("use_stub").get<bool>()) {
        auto enc = stub_from_config(cfg, static_cast<int>(V.dim()));
        seic::EmbeddingMatrix e;
        e.data = enc.forward(Vm);
        e.ids = V.ids;
        Vm = normalized_data(e);
    }
    seic::Matrix Tm;
    std::string tpath = cfg.at("paths").at("text_embeddings");
    if (tpath.empty())
        Tm = Vm;  // self-paired
    else
        Tm = normalized_data(seic::read_embeddings(tpath));
    auto truth = maybe_truth(cfg);
    int K = cfg.at("pairgen").at("K");
    tc.checkpoint_path = out_path(cfg, "stage2.ckpt");
    auto res = seic::run_alignment(Vm, Tm, K, tc, truth.empty() ? nullptr : &truth);
    seic::Checkpoint ck;
    ck.heads = res.heads;
    ck.step = tc.stage2.epochs;
    seic::save_checkpoint(ck, tc.checkpoint_path);
    seic::write_history_csv(res.history, out_path(cfg, "history_stage2.csv"), false);
    auto pred = seic::predict_clusters(res.heads, Vm);
    auto rep = seic::make_report(pred, truth.empty() ? nullptr : &truth, K);
    write_report(rep, out_path(cfg, "report.json"));
    std::cout << "align: " << tc.stage2.epochs << " epochs done\n";
    print_metrics(rep);
    return 0;
}

int cmd_enhance(const json& cfg) {
    auto tc = seic::train_config_from_json(cfg);
    std::string ckpath = cfg.at("paths").at("checkpoint");
    if (ckpath.empty()) throw seic::ConfigError("enhance requires paths.checkpoint from a completed align run");
    auto ck = seic::load_checkpoint(ckpath);
    auto X = seic::read_embeddings(cfg.at("paths").at("embeddings"));
    auto enc = stub_from_config(cfg, static_cast<int>(X.dim()));
    auto adapters = seic::init_adapters(enc.n_blocks, enc.D, tc.lora_rank, tc.placement, tc.lora_relu, tc.seed);
    auto truth = maybe_truth(cfg);
    seic::Matrix Tm;
    const seic::Matrix* static_text = nullptr;
    std::string tpath = cfg.at("paths").at("text_embeddings");
    if (!tpath.empty()) {
        Tm = normalized_data(seic::read_embeddings(tpath));
        static_text = &Tm;
    }
    tc.checkpoint_path = out_path(cfg, "stage3.ckpt");
    auto res = seic::run_self_enhancement(X.data, enc, adapters, ck.heads, tc, truth.empty() ? nullptr : &truth,
                                          static_text);
    seic::Checkpoint out;
    out.heads = res.heads;
    out.adapters = res.adapters;
    out.has_adapters = true;
    out.step = tc.stage3.epochs;
    seic::save_checkpoint(out, tc.checkpoint_path);
    seic::write_history_csv(res.history, out_path(cfg, "history_stage3.csv"), true);
    auto pred = seic::predict_clusters(res.heads, enc, res.adapters, X.data);
    auto rep = seic::make_report(pred, truth.empty() ? nullptr : &truth, res.heads.K);
    write_report(rep, out_path(cfg, "report.json"));
    std::cout << "enhance: " << tc.stage3.epochs << " epochs done (" << seic::to_string(tc.stage3.self_mode) << ")\n";
    print_metrics(rep);
    return 0;
}

int cmd_evaluate(const json& cfg) {
    std::string ckpath = cfg.at("paths").at("checkpoint");
    if (ckpath.empty()) throw seic::ConfigError("evaluate requires paths.checkpoint");
    auto ck = seic::load_checkpoint(ckpath);
    auto X = seic::read_embeddings(cfg.at("paths").at("embeddings"));
    std::vector<int> pred;
    if (ck.has_adapters || cfg.at("encoder").at("use_stub").get<bool>()) {
        auto enc = stub_from_config(cfg, static_cast<int>(X.dim()));
        seic::LoraAdapterSet adapters = ck.adapters;
        if (!ck.has_adapters) {
            // stage-2 model evaluated through the base encoder
            adapters = seic::init_adapters(enc.n_blocks, enc.D, 1, seic::LoraPlacement::parallel_qv, false, 0);
        }
        pred = seic::predict_clusters(ck.heads, enc, adapters, X.data);
    } else {
        pred = seic::predict_clusters(ck.heads, normalized_data(X));
    }
    auto truth = maybe_truth(cfg);
    auto rep = seic::make_report(pred, truth.empty() ? nullptr : &truth, ck.heads.K);
    write_report(rep, out_path(cfg, "report.json"));
    print_metrics(rep);
    return 0;
}

int cmd_report(const json& cfg, const std::vector<std::string>& run_dirs) {
    if (run_dirs.empty()) throw seic::ConfigError("report requires at least one run directory");
    struct Run {
        std::string name;
        double acc = -1, nmi = -1, ari = -1, hist_std = 0;
        std::vector<double> std_curve;
    };
    std::vector<Run> runs;
    for (const auto& dir : run_dirs) {
        Run r;
        r.name = fs::path(dir).filename().string();
        if (r.name.empty()) r.name = dir;
        fs::path rep = fs::path(dir) / "report.json";
        if (!fs::exists(rep)) throw seic::IoError("missing report.json in run dir " + dir);
        std::ifstream is(rep);
        json j = json::parse(is);
        r.acc = j.value("acc", -1.0);
        r.nmi = j.value("nmi", -1.0);
        r.ari = j.value("ari", -1.0);
        r.hist_std = j.value("hist_std", 0.0);
        fs::path hist = fs::path(dir) / "history_stage2.csv";
        if (!fs::exists(hist)) hist = fs::path(dir) / "history_stage3.csv";
        if (!fs::exists(hist)) throw seic::IoError("missing history csv in run dir " + dir);
        std::ifstream hs(hist);
        std::string line;
        std::getline(hs, line);  // header
        std::vector<std::string> cols;
        {
            std::stringstream ss(line);
            std::string c;
            while (std::getline(ss, c, ',')) cols.push_back(c);
        }
        size_t std_col = 0;
        for (size_t i = 0; i < cols.size(); ++i)
            if (cols[i] == "hist_std") std_col = i;
        while (std::getline(hs, line)) {
            std::stringstream ss(line);
            std::string c;
            std::vector<std::string> vals;
            while (std::getline(ss, c, ',')) vals.push_back(c);
            if (vals.size() > std_col) r.std_curve.push_back(std::stod(vals[std_col]));
        }
        runs.push_back(std::move(r));
    }

    std::ofstream md(out_path(cfg, "ablation.md"));
    md << "| run | ACC | NMI | ARI | hist_std |\n|---|---|---|---|---|\n";
    md << std::fixed << std::setprecision(3);
    double sum = 0, sumsq = 0;
    int n_acc = 0;
    for (const auto& r : runs) {
        md << "| " << r.name << " | ";
        if (r.acc >= 0) {
            md << r.acc << " | " << r.nmi << " | " << r.ari << " | ";
            sum += r.acc;
            sumsq += r.acc * r.acc;
            ++n_acc;
        } else {
            md << "- | - | - | ";
        }
        md << r.hist_std << " |\n";
    }
    if (n_acc > 1) {
        double mean = sum / n_acc;
        double sd = std::sqrt(std::max(0.0, sumsq / n_acc - mean * mean));
        md << "\nACC mean ± std over " << n_acc << " runs: " << mean << " ± " << sd << "\n";
    }

    std::ofstream cs(out_path(cfg, "curves.csv"));
    cs << "epoch";
    for (const auto& r : runs) cs << "," << r.name;
    cs << "\n";
    size_t max_len = 0;
    for (const auto& r : runs) max_len = std::max(max_len, r.std_curve.size());
    for (size_t e = 0; e < max_len; ++e) {
        cs << e;
        for (const auto& r : runs) {
            cs << ",";
            if (e < r.std_curve.size()) cs << r.std_curve[e];
        }
        cs << "\n";
    }
    std::cout << "report: " << runs.size() << " runs -> " << out_path(cfg, "ablation.md") << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SEIC: two-stage deep image clustering (alignment + self-enhanced fine-tuning)"};
    app.require_subcommand(0, 1);
    std::string config_path;
    bool print_config = false;
    bool allow_collapse = false;
    app.add_option("--config", config_path, "JSON config file (overrides the built-in defaults)");
    app.add_flag("--print-config", print_config, "print the fully resolved config and exit");
    app.add_flag("--allow-collapse", allow_collapse, "permit self_mode=align_loss (known collapse mode)");

    std::map<std::string, CLI::App*> subs;
    for (const char* name : {"synth", "pairgen", "align", "enhance", "evaluate", "report"}) {
        auto* s = app.add_subcommand(name);
        s->allow_extras();
        subs[name] = s;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        json cfg = seic::load_config(config_path);
        std::string active;
        std::vector<std::string> extras;
        for (auto& [name, s] : subs) {
            if (s->parsed()) {
                active = name;
                extras = s->remaining();
            }
        }
        std::vector<std::string> positionals;
        std::vector<std::string> overrides;
        for (size_t i = 0; i < extras.size(); ++i) {
            if (extras[i].rfind("--", 0) == 0) {
                overrides.push_back(extras[i]);
                if (extras[i].find('=') == std::string::npos && i + 1 < extras.size()) overrides.push_back(extras[++i]);
            } else {
                positionals.push_back(extras[i]);
            }
        }
        apply_extras(cfg, overrides);
        if (allow_collapse) cfg["stage3"]["allow_collapse"] = true;

        if (print_config) {
            std::cout << cfg.dump(2) << "\n";
            return 0;
        }
        if (active.empty()) {
            std::cerr << app.help();
            return 2;
        }
        if (active == "synth") return cmd_synth(cfg);
        if (active == "pairgen") return cmd_pairgen(cfg);
        if (active == "align") return cmd_align(cfg);
        if (active == "enhance") return cmd_enhance(cfg);
        if (active == "evaluate") return cmd_evaluate(cfg);
        if (active == "report") return cmd_report(cfg, positionals);
        return 2;
    } catch (const seic::ConfigError& e) {
        std::cerr << "[" << (argc > 1 ? argv[1] : "seic") << "] config error: " << e.what() << "\n";
        return 2;
    } catch (const seic::PreconditionError& e) {
        std::cerr << "[" << (argc > 1 ? argv[1] : "seic") << "] precondition error: " << e.what() << "\n";
        return 2;
    } catch (const seic::IoError& e) {
        std::cerr << "[" << (argc > 1 ? argv[1] : "seic") << "] io error: " << e.what() << "\n";
        return 3;
    } catch (const seic::NumericError& e) {
        std::cerr << "[" << (argc > 1 ? argv[1] : "seic") << "] numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "[" << (argc > 1 ? argv[1] : "seic") << "] error: " << e.what() << "\n";
        return 1;
    }
}
