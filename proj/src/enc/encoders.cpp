#include "mcie/enc/encoders.hpp"

#include <cmath>
#include <sstream>

#include "mcie/num/ops.hpp"

namespace mcie::enc {

namespace {

constexpr int kHashTableRows = 4096;

std::vector<std::string> whitespace_tokens(const std::string& text) {
    std::vector<std::string> tokens;
    std::istringstream is(text);
    std::string t;
    while (is >> t) tokens.push_back(t);
    return tokens;
}

}  // namespace

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

ToyTextEncoder::ToyTextEncoder(int d, std::uint64_t seed, int max_tokens)
    : d_(d), max_tokens_(max_tokens) {
    Rng rng(seed);
    table_ = num::Tensor::randn({kHashTableRows, d}, rng);
}

num::Tensor ToyTextEncoder::encode(const std::string& text) const {
    const auto tokens = whitespace_tokens(text);
    if (tokens.empty()) throw data_error("cannot encode empty text");
    const int n = std::min<int>(static_cast<int>(tokens.size()), max_tokens_);
    std::vector<int> rows(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        rows[static_cast<std::size_t>(i)] =
            static_cast<int>(fnv1a64(tokens[static_cast<std::size_t>(i)]) % kHashTableRows);
    }
    std::vector<double> pos(static_cast<std::size_t>(n) * d_);
    for (int p = 0; p < n; ++p) {
        for (int i = 0; i < d_; ++i) {
            const double rate = std::pow(10000.0, -static_cast<double>(i - (i % 2)) / d_);
            pos[static_cast<std::size_t>(p) * d_ + i] =
                (i % 2 == 0) ? std::sin(p * rate) : std::cos(p * rate);
        }
    }
    num::NoGradGuard ng;
    return num::add(num::gather_rows(table_, rows),
                    num::Tensor::from_vector({n, d_}, std::move(pos)));
}

ToyVisualEncoder::ToyVisualEncoder(int d, int channels, int patch, std::uint64_t seed)
    : d_(d), channels_(channels), patch_(patch) {
    Rng rng(seed);
    const int in = channels * patch * patch;
    proj_ = num::Tensor::randn({d, in}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
    bias_ = num::Tensor::randn({d}, rng, 0.1);
}

num::Tensor ToyVisualEncoder::encode(const io::Image& image) const {
    if (image.c != channels_) {
        throw data_error("visual encoder expects " + std::to_string(channels_) +
                         " channels, image has " + std::to_string(image.c));
    }
    if (image.h % patch_ != 0 || image.w % patch_ != 0) {
        throw data_error("image " + std::to_string(image.h) + "x" + std::to_string(image.w) +
                         " not divisible by patch " + std::to_string(patch_));
    }
    const int ph = image.h / patch_, pw = image.w / patch_;
    const int in = channels_ * patch_ * patch_;
    std::vector<double> patches(static_cast<std::size_t>(ph) * pw * in);
    for (int pr = 0; pr < ph; ++pr) {
        for (int pc = 0; pc < pw; ++pc) {
            double* dst = patches.data() + (static_cast<std::size_t>(pr) * pw + pc) * in;
            int k = 0;
            for (int dr = 0; dr < patch_; ++dr)
                for (int dc = 0; dc < patch_; ++dc)
                    for (int ch = 0; ch < channels_; ++ch)
                        dst[k++] = image.at(pr * patch_ + dr, pc * patch_ + dc, ch);
        }
    }
    num::NoGradGuard ng;
    return num::linear(num::Tensor::from_vector({ph * pw, in}, std::move(patches)), proj_, bias_);
}

ToyEmbedder::ToyEmbedder(int d, int channels, std::uint64_t seed)
    : d_(d), vis_(d, channels, 1, derive_seed(seed, 1)) {
    Rng rng(derive_seed(seed, 2));
    proj_ = num::Tensor::randn({d, d}, rng, 1.0 / std::sqrt(static_cast<double>(d)));
}

num::Tensor ToyEmbedder::embed(const io::Image& image) const {
    num::NoGradGuard ng;
    num::Tensor tokens = vis_.encode(image);
    const int n = tokens.rows(), d = tokens.cols();
    std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
    for (int r = 0; r < n; ++r)
        for (int j = 0; j < d; ++j) mean[static_cast<std::size_t>(j)] += tokens.at(r, j);
    for (double& v : mean) v /= n;
    num::Tensor pooled = num::matmul_nt(num::Tensor::from_vector({1, d}, std::move(mean)), proj_);
    double norm = 0.0;
    for (double v : pooled.value()) norm += v * v;
    norm = std::sqrt(norm);
    std::vector<double> unit(pooled.value());
    if (norm < 1e-12) {
        unit.assign(static_cast<std::size_t>(d_), 0.0);
        unit[0] = 1.0;
    } else {
        for (double& v : unit) v /= norm;
    }
    return num::Tensor::from_vector({d_}, std::move(unit));
}

EncodedInstructionSet encode_instruction_set(const TextEncoder& enc,
                                             const std::vector<std::string>& sub_texts) {
    if (sub_texts.empty()) throw contract_error("encode_instruction_set: no sub-instructions");
    EncodedInstructionSet out;
    std::vector<num::Tensor> blocks;
    blocks.reserve(sub_texts.size());
    int start = 0;
    for (const std::string& text : sub_texts) {
        num::Tensor block = enc.encode(text);
        out.spans.emplace_back(start, block.rows());
        start += block.rows();
        blocks.push_back(std::move(block));
    }
    num::NoGradGuard ng;
    out.tokens = num::concat_rows(blocks);
    return out;
}

}  // namespace mcie::enc
