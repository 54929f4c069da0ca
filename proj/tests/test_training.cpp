#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "edulm/checkpoint.hpp"
#include "edulm/error.hpp"
#include "edulm/training.hpp"
#include "warning_capture.hpp"

using namespace edulm;

namespace {

struct Toy {
    SynthCorpus corpus;
    Vocab vocab;
    std::vector<TokenSequence> sequences;
    ModelConfig config;
};

const Toy &toy() {
    static const Toy t = [] {
        Toy t;
        t.corpus = synth_corpus({120, 0.5, Theme::education, 120}, 3);
        std::vector<std::string> lines = t.corpus.unlabeled;
        for (const auto &p : t.corpus.posts) {
            lines.push_back(p.text);
        }
        t.vocab = build_vocab(lines, 400, 2);
        for (const auto &line : t.corpus.unlabeled) {
            t.sequences.push_back(encode(line, t.vocab, 48));
        }
        t.config.vocab_size = t.vocab.size();
        t.config.hidden_size = 16;
        t.config.num_layers = 1;
        t.config.num_heads = 2;
        t.config.ffn_size = 32;
        t.config.max_positions = 48;
        return t;
    }();
    return t;
}

PretrainHyper toy_pretrain(std::size_t epochs = 2) {
    PretrainHyper h;
    h.learning_rate = 1e-3;
    h.epochs = epochs;
    h.max_len = 48;
    h.seed = 11;
    return h;
}

FinetuneHyper toy_finetune() {
    FinetuneHyper h;
    h.learning_rate = 1e-3;
    h.batch_size = 4;
    h.max_len = 48;
    h.seed = 5;
    return h;
}

TokenSequence manual_sequence(std::vector<std::int32_t> ids, std::size_t pad_to) {
    TokenSequence s;
    s.ids = std::move(ids);
    s.attention_mask.assign(s.ids.size(), 1);
    s.ids.resize(pad_to, kPadId);
    s.attention_mask.resize(pad_to, 0);
    s.segment_ids.assign(pad_to, 0);
    return s;
}

}  // namespace

TEST_CASE("masked_count rounds half up with a floor of one") {
    CHECK(masked_count(0, 0.15) == 0);
    CHECK(masked_count(1, 0.15) == 1);
    CHECK(masked_count(3, 0.15) == 1);
    CHECK(masked_count(10, 0.15) == 2);  // 1.5 rounds up
    CHECK(masked_count(20, 0.15) == 3);
    CHECK(masked_count(30, 0.15) == 5);  // 4.5
    CHECK(masked_count(100, 0.15) == 15);
    for (std::size_t m = 7; m <= 600; ++m) {
        const auto expected = static_cast<std::size_t>(std::llround(0.15L * static_cast<long double>(m)));
        CHECK(masked_count(m, 0.15) == expected);
    }
}

TEST_CASE("mask_tokens selection and corruption") {
    const std::size_t vocab = 60;
    Rng rng(99);
    std::size_t counts[4] = {};
    std::size_t selected_total = 0;
    for (int trial = 0; trial < 10000; ++trial) {
        // CLS, body, SEP, with an embedded UNK and MASK that must never be picked
        std::vector<std::int32_t> ids{kClsId};
        const std::size_t body = 1 + rng.uniform_index(30);
        for (std::size_t i = 0; i < body; ++i) {
            ids.push_back(static_cast<std::int32_t>(kNumSpecialTokens + rng.uniform_index(vocab - kNumSpecialTokens)));
        }
        ids.insert(ids.begin() + 1, kUnkId);
        ids.push_back(kMaskId);
        ids.push_back(kSepId);
        const auto seq = manual_sequence(ids, 40);
        const auto m = mask_tokens(seq, 0.15, vocab, rng);
        REQUIRE(m);
        REQUIRE(m->selected() == masked_count(body, 0.15));
        for (std::size_t i = 0; i < seq.ids.size(); ++i) {
            if (m->labels[i] == kIgnoreIndex) {
                CHECK(m->corruption[i] == Corruption::none);
                CHECK(m->input_ids[i] == seq.ids[i]);
                continue;
            }
            REQUIRE_FALSE(is_special_id(seq.ids[i]));
            REQUIRE(seq.attention_mask[i] == 1);
            CHECK(m->labels[i] == seq.ids[i]);
            ++counts[static_cast<int>(m->corruption[i])];
            ++selected_total;
            switch (m->corruption[i]) {
                case Corruption::mask: CHECK(m->input_ids[i] == kMaskId); break;
                case Corruption::unchanged: CHECK(m->input_ids[i] == seq.ids[i]); break;
                case Corruption::random_token: CHECK_FALSE(is_special_id(m->input_ids[i])); break;
                case Corruption::none: FAIL("selected position without corruption type");
            }
        }
        CHECK(m->attention_mask == seq.attention_mask);
    }
    const double n = static_cast<double>(selected_total);
    CHECK(std::abs(counts[1] / n - 0.8) <= 0.02);
    CHECK(std::abs(counts[2] / n - 0.1) <= 0.02);
    CHECK(std::abs(counts[3] / n - 0.1) <= 0.02);

    CHECK_FALSE(mask_tokens(manual_sequence({kClsId, kSepId}, 4), 0.15, vocab, rng));
    CHECK_THROWS_AS(mask_tokens(manual_sequence({kClsId, 7, kSepId}, 4), 0.0, vocab, rng), ConfigError);
    CHECK_THROWS_AS(mask_tokens(manual_sequence({kClsId, 7, kSepId}, 4), 0.15, 5, rng), ConfigError);
}

TEST_CASE("make_mlm_batch rows point at the masked positions") {
    const auto &t = toy();
    Rng rng(4);
    const std::vector<std::size_t> idx{0, 1, 2, 3};
    const auto mb = make_mlm_batch(t.sequences, idx, 0.15, t.vocab.size(), rng);
    REQUIRE(mb);
    REQUIRE(mb->rows.size() == mb->targets.size());
    for (std::size_t k = 0; k < mb->rows.size(); ++k) {
        const std::size_t b = mb->rows[k] / mb->batch.seq_len;
        const std::size_t pos = mb->rows[k] % mb->batch.seq_len;
        CHECK(t.sequences[idx[b]].ids[pos] == mb->targets[k]);
    }
}

TEST_CASE("learning rate schedule") {
    CHECK(scheduled_learning_rate(1.0, 0, 100, false) == 1.0);
    CHECK(scheduled_learning_rate(1.0, 0, 100, true) == doctest::Approx(0.1));
    CHECK(scheduled_learning_rate(1.0, 9, 100, true) == 1.0);
    CHECK(scheduled_learning_rate(1.0, 50, 100, true) == 1.0);
    CHECK(scheduled_learning_rate(2.0, 0, 1, true) == 2.0);
}

TEST_CASE("epoch log line") {
    EpochStats s{3, 1.25, 5e-5, 0.5};
    CHECK(format_epoch_line(s) == "epoch=3 split=train loss=1.250000 lr=5e-05 seconds=0.500");
    CHECK(format_epoch_line(s, "distill") == "epoch=3 split=train loss=1.250000 lr=5e-05 seconds=0.500 phase=distill");
}

TEST_CASE("pretraining reduces loss, is deterministic and records provenance") {
    const auto &t = toy();
    std::stringstream log;
    const auto a = pretrain_mlm(t.sequences, t.config, nullptr, toy_pretrain(4), &log);
    CHECK(a.checkpoint.provenance == "base");
    REQUIRE(a.epochs.size() == 4);
    CHECK(a.epochs.back().loss < a.epochs.front().loss);
    std::size_t lines = 0;
    for (std::string line; std::getline(log, line);) {
        CHECK(line.starts_with("epoch=" + std::to_string(++lines) + " split=train loss="));
    }
    CHECK(lines == 4);

    const auto b = pretrain_mlm(t.sequences, t.config, nullptr, toy_pretrain(4));
    CHECK(serialize_checkpoint(a.checkpoint) == serialize_checkpoint(b.checkpoint));

    Rng r(1);
    const Checkpoint fresh{t.config, EncoderParams<float>::init(t.config, r), ""};
    CHECK(mlm_loss(a.checkpoint, t.sequences, 0.15, 8) < mlm_loss(fresh, t.sequences, 0.15, 8));
    CHECK(mlm_loss(a.checkpoint, t.sequences, 0.15, 8) == mlm_loss(a.checkpoint, t.sequences, 0.15, 8));
    const double acc = mlm_accuracy(a.checkpoint, t.sequences, 0.15, 8);
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);

    const auto adapted = pretrain_mlm(t.sequences, t.config, &a.checkpoint, toy_pretrain(1));
    CHECK(adapted.checkpoint.provenance == "domain-adapted");
    CHECK(adapted.checkpoint.params.names() == a.checkpoint.params.names());
}

TEST_CASE("pretraining errors") {
    const auto &t = toy();
    CHECK_THROWS_AS(pretrain_mlm(t.sequences, t.config, nullptr, toy_pretrain(0)), ConfigError);
    CHECK_THROWS_AS(pretrain_mlm({}, t.config, nullptr, toy_pretrain()), InputError);
    Rng r(1);
    auto other = t.config;
    other.hidden_size = 8;
    const Checkpoint mismatched{other, EncoderParams<float>::init(other, r), "base"};
    CHECK_THROWS_AS(pretrain_mlm(t.sequences, t.config, &mismatched, toy_pretrain()), ConfigError);
}

TEST_CASE("fine-tuning on the separable urgency task") {
    const auto &t = toy();
    const auto base = pretrain_mlm(t.sequences, t.config, nullptr, toy_pretrain(1)).checkpoint;
    const auto split = split_dataset(make_task_dataset(t.corpus.posts, Task::urgency), 2);
    auto hyper = toy_finetune();
    hyper.epochs = 8;
    const auto tuned = finetune_classifier(base, split.train, t.vocab, hyper);
    CHECK(tuned.checkpoint.provenance == "fine-tuned:urgency");
    CHECK(finetuned_task(tuned.checkpoint) == Task::urgency);
    CHECK_FALSE(finetuned_task(base));

    // tensor names and shapes are those of the base config
    const auto before = base.params.tensors();
    const auto after = tuned.checkpoint.params.tensors();
    CHECK(base.params.names() == tuned.checkpoint.params.names());
    REQUIRE(before.size() == after.size());
    for (std::size_t i = 0; i < before.size(); ++i) {
        CHECK(before[i].shape() == after[i].shape());
    }

    const auto pred = predict_labels(tuned.checkpoint, split.test, t.vocab, 48);
    REQUIRE(pred.size() == split.test.examples.size());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        hits += pred[i] == split.test.examples[i].label ? 1 : 0;
    }
    CHECK(static_cast<double>(hits) / static_cast<double>(pred.size()) >= 0.85);

    const auto again = finetune_classifier(base, split.train, t.vocab, hyper);
    CHECK(serialize_checkpoint(again.checkpoint) == serialize_checkpoint(tuned.checkpoint));
}

TEST_CASE("fine-tuning errors and warnings") {
    const auto &t = toy();
    Rng r(2);
    const Checkpoint base{t.config, EncoderParams<float>::init(t.config, r), "base"};
    auto ds = make_task_dataset(t.corpus.posts, Task::urgency);
    ds.examples.resize(6);
    for (auto &e : ds.examples) {
        e.label = 1;
    }
    {
        WarningCapture capture;
        auto h = toy_finetune();
        h.epochs = 1;
        finetune_classifier(base, ds, t.vocab, h);
        REQUIRE(capture.messages.size() == 1);
        CHECK(capture.messages[0].find("single class") != std::string::npos);
    }
    auto h = toy_finetune();
    CHECK_THROWS_AS(finetune_classifier(base, TaskDataset{}, t.vocab, h), InputError);
    h.max_len = 49;
    CHECK_THROWS_AS(finetune_classifier(base, ds, t.vocab, h), ConfigError);
    h = toy_finetune();
    h.epochs = 0;
    CHECK_THROWS_AS(finetune_classifier(base, ds, t.vocab, h), ConfigError);
    CHECK_THROWS_AS(finetune_classifier(base, ds, Vocab::from_tokens({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "a"}),
                                        toy_finetune()),
                    ConfigError);
}
