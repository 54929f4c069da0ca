#include "edulm/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "edulm/error.hpp"
#include "edulm/io.hpp"

namespace edulm {

namespace {

constexpr std::string_view kMagic = "EDLM";
constexpr std::string_view kProvenanceKey = "provenance=";

void put_u32(std::string &out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out += static_cast<char>((v >> (8 * i)) & 0xffu);
    }
}

std::uint32_t checked_u32(std::size_t v, const char *what) {
    if (v > 0xffffffffu) {
        throw ShapeError(std::string(what) + " does not fit the checkpoint's 32-bit field");
    }
    return static_cast<std::uint32_t>(v);
}

class Reader {
   public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    std::size_t offset() const { return pos_; }
    bool at_end() const { return pos_ == bytes_.size(); }

    std::string_view take(std::size_t n, const char *what) {
        if (bytes_.size() - pos_ < n) {
            throw FormatError(std::string("truncated checkpoint while reading ") + what, pos_);
        }
        const std::string_view out = bytes_.substr(pos_, n);
        pos_ += n;
        return out;
    }
    std::uint32_t u32(const char *what) {
        const std::string_view raw = take(4, what);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) {
            v = (v << 8) | static_cast<unsigned char>(raw[static_cast<std::size_t>(i)]);
        }
        return v;
    }
    std::uint8_t u8(const char *what) { return static_cast<std::uint8_t>(take(1, what)[0]); }

   private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint &checkpoint) {
    if (checkpoint.provenance.find('\n') != std::string::npos) {
        throw UsageError("provenance must be a single line");
    }
    std::string out(kMagic);
    put_u32(out, kCheckpointVersion);
    const std::string config_text =
        checkpoint.config.to_text() + std::string(kProvenanceKey) + checkpoint.provenance + "\n";
    put_u32(out, checked_u32(config_text.size(), "config text"));
    out += config_text;

    const auto names = checkpoint.params.names();
    const auto tensors = checkpoint.params.tensors();
    put_u32(out, checked_u32(tensors.size(), "tensor count"));
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        put_u32(out, checked_u32(names[i].size(), "tensor name"));
        out += names[i];
        const Shape &shape = tensors[i].shape();
        if (shape.size() > 255) {
            throw ShapeError("tensor rank exceeds 255");
        }
        out += static_cast<char>(shape.size());
        for (const std::size_t d : shape) {
            put_u32(out, checked_u32(d, "tensor dimension"));
        }
        for (const float v : tensors[i].data()) {
            put_u32(out, std::bit_cast<std::uint32_t>(v));
        }
    }
    return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
    Reader in(bytes);
    if (in.take(kMagic.size(), "magic") != kMagic) {
        throw FormatError("not a checkpoint (bad magic)", 0);
    }
    const std::size_t version_offset = in.offset();
    const std::uint32_t version = in.u32("version");
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version), version_offset);
    }
    const std::size_t config_offset = in.offset();
    const std::uint32_t config_len = in.u32("config length");
    std::string config_text(in.take(config_len, "config text"));

    Checkpoint ck;
    const std::size_t prov = config_text.rfind(kProvenanceKey);
    if (prov == std::string::npos || (prov != 0 && config_text[prov - 1] != '\n') || config_text.back() != '\n') {
        throw FormatError("config text lacks a provenance line", config_offset);
    }
    ck.provenance = config_text.substr(prov + kProvenanceKey.size());
    ck.provenance.pop_back();
    config_text.resize(prov);
    try {
        ck.config = ModelConfig::from_text(config_text);
    } catch (const ConfigError &e) {
        throw FormatError(std::string("invalid config: ") + e.what(), config_offset);
    }

    const auto layout = parameter_layout(ck.config);
    const std::size_t count_offset = in.offset();
    const std::uint32_t count = in.u32("tensor count");
    if (count != layout.size()) {
        throw IntegrityError("checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                             std::to_string(layout.size()) + " (table at byte " + std::to_string(count_offset) + ")");
    }
    std::vector<Tensor<float>> loaded;
    loaded.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = in.u32("tensor name length");
        const std::string name(in.take(name_len, "tensor name"));
        const std::uint8_t rank = in.u8("tensor rank");
        Shape shape(rank);
        for (auto &d : shape) {
            d = in.u32("tensor dims");
        }
        if (name != layout[i].first || shape != layout[i].second) {
            throw IntegrityError("tensor " + std::to_string(i) + " is '" + name + "' " + shape_to_string(shape) +
                                 ", expected '" + layout[i].first + "' " + shape_to_string(layout[i].second));
        }
        const std::size_t n = shape_numel(shape);
        const std::size_t payload_offset = in.offset();
        const std::string_view raw = in.take(4 * n, "tensor payload");
        std::vector<float> data(n);
        for (std::size_t j = 0; j < n; ++j) {
            std::uint32_t bits = 0;
            for (int b = 3; b >= 0; --b) {
                bits = (bits << 8) | static_cast<unsigned char>(raw[4 * j + static_cast<std::size_t>(b)]);
            }
            data[j] = std::bit_cast<float>(bits);
        }
        try {
            loaded.emplace_back(std::move(shape), std::move(data));
        } catch (const NumericError &) {
            throw FormatError("non-finite value in tensor '" + name + "'", payload_offset);
        }
    }
    if (!in.at_end()) {
        throw FormatError("trailing bytes after tensor table", in.offset());
    }

    std::size_t next = 0;
    ck.params.layers.resize(ck.config.num_layers);
    if (!ck.config.tie_mlm_decoder) {
        // for_each only visits the untied decoder once the handle is non-empty
        ck.params.mlm_decoder_weight = Tensor<float>::zeros({1});
    }
    ck.params.for_each([&](const std::string &, Tensor<float> &t) { t = loaded[next++]; });
    return ck;
}

void save_checkpoint(const Checkpoint &checkpoint, const std::filesystem::path &path) {
    write_file_atomic(path, serialize_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path &path) { return deserialize_checkpoint(read_file(path)); }

}  // namespace edulm
