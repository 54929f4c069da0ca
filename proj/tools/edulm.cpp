// edulm: command-line pipeline (synth, build-vocab, pretrain, distill, finetune, eval, bench).

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "edulm/checkpoint.hpp"
#include "edulm/data.hpp"
#include "edulm/distillation.hpp"
#include "edulm/error.hpp"
#include "edulm/evaluation.hpp"
#include "edulm/io.hpp"
#include "edulm/log.hpp"
#include "edulm/tokenizer.hpp"
#include "edulm/training.hpp"

namespace fs = std::filesystem;
using namespace edulm;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitConfig = 3;
constexpr int kExitRuntime = 4;

struct Common {
    std::uint64_t seed = 0;
    std::string out;
    std::string log;
    std::string config;
};

void add_common(CLI::App *cmd, Common &c, bool needs_out) {
    cmd->add_option("--config", c.config, "flat key=value file mirroring the flags");
    cmd->add_option("--seed", c.seed, "random seed")->capture_default_str();
    auto *out = cmd->add_option("--out", c.out, "output path");
    if (needs_out) {
        out->required();
    }
    cmd->add_option("--log", c.log, "append per-epoch log lines here (default: stderr)");
}

void require_file(const std::string &path) {
    if (!fs::is_regular_file(path)) {
        throw InputError("no such file: " + path);
    }
}

void require_output_dir(const fs::path &out) {
    const fs::path parent = out.has_parent_path() ? out.parent_path() : fs::path(".");
    if (!fs::is_directory(parent)) {
        throw InputError("output directory does not exist: " + parent.string());
    }
}

// Resolved flags, seed and input digests, so a run can be traced and repeated.
void print_header(const CLI::App &cmd, const std::vector<std::string> &inputs) {
    std::cerr << "# edulm " << cmd.get_name() << "\n";
    std::istringstream resolved(cmd.config_to_str(true, false));
    for (std::string line; std::getline(resolved, line);) {
        if (!line.empty() && line.front() != '[' && line.front() != '#') {
            std::cerr << "#   " << line << "\n";
        }
    }
    for (const auto &p : inputs) {
        std::cerr << "#   input " << p << " fnv1a64=" << digest_hex(read_file(p)) << "\n";
    }
}

struct LogSink {
    std::unique_ptr<std::ofstream> file;
    std::ostream *stream = &std::cerr;

    explicit LogSink(const std::string &path) {
        if (!path.empty()) {
            require_output_dir(path);
            file = std::make_unique<std::ofstream>(path, std::ios::app);
            if (!*file) {
                throw InputError("cannot open log file: " + path);
            }
            stream = file.get();
        }
    }
};

// Text lines from plain files, or post texts from .jsonl files.
std::vector<std::string> read_corpus(const std::vector<std::string> &paths) {
    std::vector<std::string> lines;
    for (const auto &p : paths) {
        if (fs::path(p).extension() == ".jsonl") {
            for (const auto &post : load_posts(p)) {
                lines.push_back(post.text);
            }
            continue;
        }
        std::istringstream in(read_file(p));
        for (std::string line; std::getline(in, line);) {
            if (!normalize_text(line).empty()) {
                lines.push_back(line);
            }
        }
    }
    if (lines.empty()) {
        throw InputError("corpus is empty");
    }
    return lines;
}

std::vector<TokenSequence> encode_corpus(const std::vector<std::string> &lines, const Vocab &vocab,
                                         std::size_t max_len) {
    std::vector<TokenSequence> out;
    out.reserve(lines.size());
    for (const auto &l : lines) {
        out.push_back(encode(l, vocab, max_len));
    }
    return out;
}

std::size_t clamp_len(std::size_t max_len, const ModelConfig &config) {
    if (max_len > config.max_positions) {
        throw ConfigError("--max-len " + std::to_string(max_len) + " exceeds the model's max_positions " +
                          std::to_string(config.max_positions));
    }
    return max_len;
}

LayerMap parse_layer_map(const std::string &text) {
    LayerMap map;
    std::istringstream in(text);
    for (std::string item; std::getline(in, item, ',');) {
        try {
            std::size_t used = 0;
            map.push_back(std::stoul(item, &used));
            if (used != item.size()) {
                throw std::invalid_argument(item);
            }
        } catch (const std::exception &) {
            throw ConfigError("--layer-map expects comma-separated layer indices, got '" + text + "'");
        }
    }
    return map;
}

// CLI11 only reads config files attached to the top-level app, so the
// subcommand's --config is expanded here: every key=value line becomes
// --key=value unless that flag was given on the command line.
std::vector<std::string> expand_config(int argc, char **argv) {
    std::vector<std::string> args(argv, argv + argc);
    std::string path;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
        } else if (args[i].starts_with("--config=")) {
            path = args[i].substr(9);
        }
    }
    if (path.empty()) {
        return args;
    }
    require_file(path);
    std::istringstream in(read_file(path));
    const auto given = [&](const std::string &key) {
        return std::any_of(args.begin(), args.end(), [&](const std::string &a) {
            return a == "--" + key || a.starts_with("--" + key + "=");
        });
    };
    std::vector<std::string> extra;
    for (const auto &item : CLI::ConfigBase().from_config(in)) {
        if (!item.parents.empty()) {
            throw ConfigError("config file " + path + " must be flat key=value lines, found section '" +
                              item.parents.front() + "'");
        }
        if (item.name == "config" || given(item.name)) {
            continue;
        }
        for (const auto &value : item.inputs) {
            extra.push_back("--" + item.name + "=" + value);
        }
    }
    args.insert(args.end(), extra.begin(), extra.end());
    return args;
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"edulm: encoder pretraining, distillation and evaluation for forum posts"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "edulm 1.0");

    // synth
    Common synth_c;
    SynthSpec synth_spec;
    std::string theme = "education";
    auto *synth = app.add_subcommand("synth", "generate a synthetic labeled corpus (posts.jsonl, corpus.txt)");
    add_common(synth, synth_c, true);
    synth->add_option("--n-posts", synth_spec.n_posts, "labeled posts")->capture_default_str();
    synth->add_option("--balance", synth_spec.class_balance, "positive fraction per task")->capture_default_str();
    synth->add_option("--theme", theme, "education or general")->capture_default_str();
    synth->add_option("--n-unlabeled", synth_spec.n_unlabeled, "unlabeled lines")->capture_default_str();

    // build-vocab
    Common vocab_c;
    std::vector<std::string> vocab_corpus;
    std::size_t vocab_size = 2000, min_freq = 2;
    auto *bv = app.add_subcommand("build-vocab", "build a WordPiece vocabulary");
    add_common(bv, vocab_c, true);
    bv->add_option("--corpus", vocab_corpus, "text or .jsonl files")->required();
    bv->add_option("--size", vocab_size, "target vocabulary size")->capture_default_str();
    bv->add_option("--min-freq", min_freq, "minimum character frequency")->capture_default_str();

    // model shape flags shared by pretrain
    ModelConfig model_cfg;
    PretrainHyper pre_h;
    Common pre_c;
    std::vector<std::string> pre_corpus;
    std::string pre_vocab, pre_init;
    auto *pre = app.add_subcommand("pretrain", "MLM pretraining; --init continues from a checkpoint");
    add_common(pre, pre_c, true);
    pre->add_option("--corpus", pre_corpus, "text or .jsonl files")->required();
    pre->add_option("--vocab", pre_vocab, "vocabulary file")->required();
    pre->add_option("--init", pre_init, "checkpoint to continue from (domain adaptation)");
    pre->add_option("--lr", pre_h.learning_rate, "learning rate")->capture_default_str();
    pre->add_option("--epochs", pre_h.epochs, "epochs")->capture_default_str();
    pre->add_option("--max-len", pre_h.max_len, "max sequence length")->capture_default_str();
    pre->add_option("--batch", pre_h.batch_size, "batch size")->capture_default_str();
    pre->add_option("--mask-rate", pre_h.mask_rate, "MLM selection rate")->capture_default_str();
    pre->add_option("--warmup", pre_h.warmup, "linear warmup over the first 10% of steps")->capture_default_str();
    std::vector<CLI::Option *> shape_flags{
        pre->add_option("--hidden", model_cfg.hidden_size, "hidden size")->capture_default_str(),
        pre->add_option("--layers", model_cfg.num_layers, "encoder layers")->capture_default_str(),
        pre->add_option("--heads", model_cfg.num_heads, "attention heads")->capture_default_str(),
        pre->add_option("--ffn", model_cfg.ffn_size, "feed-forward size")->capture_default_str(),
        pre->add_option("--max-positions", model_cfg.max_positions, "position table size")->capture_default_str(),
        pre->add_option("--dropout", model_cfg.dropout_rate, "dropout rate")->capture_default_str(),
    };

    // distill
    DistillHyper dis_h;
    Common dis_c;
    std::vector<std::string> dis_corpus;
    std::string dis_vocab, dis_teacher, dis_map;
    std::size_t dis_max_len = 512;
    auto *dis = app.add_subcommand("distill", "train a half-depth student against a teacher");
    add_common(dis, dis_c, true);
    dis->add_option("--teacher", dis_teacher, "teacher checkpoint")->required();
    dis->add_option("--corpus", dis_corpus, "text or .jsonl files")->required();
    dis->add_option("--vocab", dis_vocab, "vocabulary file")->required();
    dis->add_option("--layer-map", dis_map, "teacher layers to copy, e.g. 0,2 (default: even layers)");
    dis->add_option("--lr", dis_h.learning_rate, "learning rate")->capture_default_str();
    dis->add_option("--epochs", dis_h.epochs, "epochs")->capture_default_str();
    dis->add_option("--batch", dis_h.batch_size, "batch size")->capture_default_str();
    dis->add_option("--max-len", dis_max_len, "max sequence length")->capture_default_str();
    dis->add_option("--mask-rate", dis_h.mask_rate, "MLM selection rate")->capture_default_str();
    dis->add_option("--temperature", dis_h.temperature, "softmax temperature")->capture_default_str();
    dis->add_option("--w-ce", dis_h.w_ce, "soft-target KL weight")->capture_default_str();
    dis->add_option("--w-mlm", dis_h.w_mlm, "hard-label MLM weight")->capture_default_str();
    dis->add_option("--w-cos", dis_h.w_cos, "hidden-state cosine weight")->capture_default_str();
    dis->add_option("--warmup", dis_h.warmup, "linear warmup over the first 10% of steps")->capture_default_str();

    // finetune
    FinetuneHyper ft_h;
    Common ft_c;
    std::string ft_ckpt, ft_data, ft_vocab, ft_task = "urgency";
    std::optional<std::uint64_t> ft_split_seed;
    bool ft_stratify = false;
    auto *ft = app.add_subcommand("finetune", "fine-tune a binary classifier on one task");
    add_common(ft, ft_c, true);
    ft->add_option("--checkpoint", ft_ckpt, "initial checkpoint")->required();
    ft->add_option("--data", ft_data, "labeled posts (.jsonl)")->required();
    ft->add_option("--vocab", ft_vocab, "vocabulary file")->required();
    ft->add_option("--task", ft_task, "sentiment, confusion or urgency")->capture_default_str();
    ft->add_option("--lr", ft_h.learning_rate, "learning rate")->capture_default_str();
    ft->add_option("--epochs", ft_h.epochs, "epochs")->capture_default_str();
    ft->add_option("--max-len", ft_h.max_len, "max sequence length")->capture_default_str();
    ft->add_option("--batch", ft_h.batch_size, "batch size")->capture_default_str();
    ft->add_option("--warmup", ft_h.warmup, "linear warmup over the first 10% of steps")->capture_default_str();
    ft->add_option("--split-seed", ft_split_seed, "train/test split seed (default: --seed)");
    ft->add_flag("--stratify", ft_stratify, "spread each course over both split sides");

    // eval
    Common ev_c;
    std::vector<std::string> ev_models;
    std::string ev_data, ev_vocab, ev_style = "table1", ev_kv_dir;
    std::size_t ev_max_len = 300;
    std::optional<std::uint64_t> ev_split_seed;
    bool ev_stratify = false;
    auto *ev = app.add_subcommand("eval", "evaluate fine-tuned checkpoints on the test split");
    add_common(ev, ev_c, false);
    ev->add_option("--model", ev_models, "fine-tuned checkpoint, optionally as name=path")->required();
    ev->add_option("--data", ev_data, "labeled posts (.jsonl)")->required();
    ev->add_option("--vocab", ev_vocab, "vocabulary file")->required();
    ev->add_option("--style", ev_style, "table1 or table2")->capture_default_str();
    ev->add_option("--max-len", ev_max_len, "max sequence length")->capture_default_str();
    ev->add_option("--split-seed", ev_split_seed, "train/test split seed (default: --seed)");
    ev->add_flag("--stratify", ev_stratify, "spread each course over both split sides");
    ev->add_option("--kv-dir", ev_kv_dir, "write a key=value twin per model/task here");

    // bench
    Common be_c;
    std::string be_model, be_reference, be_name = "model";
    BatchSpec be_spec;
    std::size_t be_reps = 20;
    auto *be = app.add_subcommand("bench", "time single-threaded inference, optionally against a reference");
    add_common(be, be_c, false);
    be->add_option("--model", be_model, "checkpoint to time")->required();
    be->add_option("--reference", be_reference, "reference checkpoint for the speedup ratio");
    be->add_option("--name", be_name, "model name in the report")->capture_default_str();
    be->add_option("--batch", be_spec.batch_size, "batch size")->capture_default_str();
    be->add_option("--seq-len", be_spec.seq_len, "sequence length")->capture_default_str();
    be->add_option("--reps", be_reps, "timed repetitions")->capture_default_str();

    try {
        std::vector<std::string> args;
        try {
            args = expand_config(argc, argv);
        } catch (const InputError &e) {
            std::cerr << "error: " << e.what() << "\n";
            return kExitInput;
        } catch (const ConfigError &e) {
            std::cerr << "error: " << e.what() << "\n";
            return kExitConfig;
        }
        std::vector<char *> ptrs;
        for (auto &a : args) {
            ptrs.push_back(a.data());
        }
        app.parse(static_cast<int>(ptrs.size()), ptrs.data());
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (synth->parsed()) {
            require_output_dir(fs::path(synth_c.out) / "x");
            print_header(*synth, {});
            synth_spec.theme = parse_theme(theme);
            const auto corpus = synth_corpus(synth_spec, synth_c.seed);
            std::string lines;
            for (const auto &l : corpus.unlabeled) {
                lines += l + "\n";
            }
            write_file_atomic(fs::path(synth_c.out) / "posts.jsonl", posts_to_jsonl(corpus.posts));
            write_file_atomic(fs::path(synth_c.out) / "corpus.txt", lines);
        } else if (bv->parsed()) {
            for (const auto &p : vocab_corpus) {
                require_file(p);
            }
            require_output_dir(vocab_c.out);
            print_header(*bv, vocab_corpus);
            const auto lines = read_corpus(vocab_corpus);
            build_vocab(lines, vocab_size, min_freq).save(vocab_c.out);
        } else if (pre->parsed()) {
            std::vector<std::string> inputs = pre_corpus;
            inputs.push_back(pre_vocab);
            if (!pre_init.empty()) {
                inputs.push_back(pre_init);
            }
            for (const auto &p : inputs) {
                require_file(p);
            }
            require_output_dir(pre_c.out);
            print_header(*pre, inputs);
            LogSink log(pre_c.log);
            const Vocab vocab = Vocab::load(pre_vocab);
            model_cfg.vocab_size = vocab.size();
            std::optional<Checkpoint> init;
            if (!pre_init.empty()) {
                init = load_checkpoint(pre_init);
                const bool shape_given = std::any_of(shape_flags.begin(), shape_flags.end(),
                                                     [](const CLI::Option *o) { return o->count() > 0; });
                if (shape_given && !(model_cfg == init->config)) {
                    throw ConfigError("model flags disagree with the --init checkpoint's config");
                }
                if (init->config.vocab_size != vocab.size()) {
                    throw ConfigError("--init checkpoint expects a vocabulary of " +
                                      std::to_string(init->config.vocab_size) + " entries, --vocab has " +
                                      std::to_string(vocab.size()));
                }
                model_cfg = init->config;
            }
            pre_h.seed = pre_c.seed;
            const auto corpus = encode_corpus(read_corpus(pre_corpus), vocab, clamp_len(pre_h.max_len, model_cfg));
            const auto result = pretrain_mlm(corpus, model_cfg, init ? &*init : nullptr, pre_h, log.stream);
            save_checkpoint(result.checkpoint, pre_c.out);
        } else if (dis->parsed()) {
            std::vector<std::string> inputs = dis_corpus;
            inputs.push_back(dis_vocab);
            inputs.push_back(dis_teacher);
            for (const auto &p : inputs) {
                require_file(p);
            }
            require_output_dir(dis_c.out);
            print_header(*dis, inputs);
            LogSink log(dis_c.log);
            const Vocab vocab = Vocab::load(dis_vocab);
            const auto teacher = load_checkpoint(dis_teacher);
            if (teacher.config.vocab_size != vocab.size()) {
                throw ConfigError("teacher and vocabulary sizes differ");
            }
            dis_h.seed = dis_c.seed;
            const auto corpus =
                encode_corpus(read_corpus(dis_corpus), vocab, clamp_len(dis_max_len, teacher.config));
            const auto result = distill(teacher, corpus, dis_h, parse_layer_map(dis_map), log.stream);
            save_checkpoint(result.checkpoint, dis_c.out);
        } else if (ft->parsed()) {
            const std::vector<std::string> inputs{ft_ckpt, ft_data, ft_vocab};
            for (const auto &p : inputs) {
                require_file(p);
            }
            require_output_dir(ft_c.out);
            print_header(*ft, inputs);
            LogSink log(ft_c.log);
            const Task task = parse_task(ft_task);
            const Vocab vocab = Vocab::load(ft_vocab);
            const auto init = load_checkpoint(ft_ckpt);
            const auto posts = load_posts(ft_data);
            const auto split = split_dataset(make_task_dataset(posts, task, ft_data),
                                             ft_split_seed.value_or(ft_c.seed), {}, ft_stratify);
            ft_h.seed = ft_c.seed;
            const auto result = finetune_classifier(init, split.train, vocab, ft_h, log.stream);
            save_checkpoint(result.checkpoint, ft_c.out);
        } else if (ev->parsed()) {
            std::vector<std::pair<std::string, std::string>> models;
            for (const auto &m : ev_models) {
                const auto eq = m.find('=');
                models.emplace_back(eq == std::string::npos ? fs::path(m).stem().string() : m.substr(0, eq),
                                    eq == std::string::npos ? m : m.substr(eq + 1));
            }
            std::vector<std::string> inputs{ev_data, ev_vocab};
            for (const auto &[name, path] : models) {
                inputs.push_back(path);
            }
            for (const auto &p : inputs) {
                require_file(p);
            }
            if (!ev_c.out.empty()) {
                require_output_dir(ev_c.out);
            }
            if (!ev_kv_dir.empty() && !fs::is_directory(ev_kv_dir)) {
                throw InputError("--kv-dir is not a directory: " + ev_kv_dir);
            }
            const ReportStyle style = parse_report_style(ev_style);
            print_header(*ev, inputs);
            const Vocab vocab = Vocab::load(ev_vocab);
            const auto posts = load_posts(ev_data);
            std::vector<MetricsReport> reports;
            for (const auto &[name, path] : models) {
                const auto model = load_checkpoint(path);
                const auto task = finetuned_task(model);
                if (!task) {
                    throw InputError(path + " is not a fine-tuned checkpoint (provenance '" + model.provenance +
                                     "')");
                }
                const auto split = split_dataset(make_task_dataset(posts, *task, ev_data),
                                                 ev_split_seed.value_or(ev_c.seed), {}, ev_stratify);
                const auto preds = predict_labels(model, split.test, vocab, clamp_len(ev_max_len, model.config));
                std::vector<std::int32_t> golds;
                for (const auto &e : split.test.examples) {
                    golds.push_back(e.label);
                }
                reports.push_back(evaluate_predictions(name, *task, preds, golds));
                if (!ev_kv_dir.empty()) {
                    write_file_atomic(fs::path(ev_kv_dir) / (name + "." + std::string(task_name(*task)) + ".txt"),
                                      render_key_values(reports.back()));
                }
            }
            const std::string report = render_report(reports, style);
            if (!ev_c.out.empty()) {
                write_file_atomic(ev_c.out, report);
            }
            std::cout << report;
        } else if (be->parsed()) {
            std::vector<std::string> inputs{be_model};
            if (!be_reference.empty()) {
                inputs.push_back(be_reference);
            }
            for (const auto &p : inputs) {
                require_file(p);
            }
            if (!be_c.out.empty()) {
                require_output_dir(be_c.out);
            }
            print_header(*be, inputs);
            const auto model = load_checkpoint(be_model);
            std::optional<Checkpoint> reference;
            if (!be_reference.empty()) {
                reference = load_checkpoint(be_reference);
            }
            be_spec.seed = be_c.seed;
            const auto result =
                benchmark_inference(model, be_spec, be_reps, reference ? &*reference : nullptr, be_name);
            const std::string text = render_benchmark(result);
            if (!be_c.out.empty()) {
                write_file_atomic(be_c.out, text);
            }
            std::cout << text;
        }
    } catch (const InputError &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const ConfigError &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const UsageError &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
