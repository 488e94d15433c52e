#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mcie/io/image.hpp"
#include "mcie/num/tensor.hpp"

namespace mcie::enc {

class TextEncoder {
public:
    virtual ~TextEncoder() = default;
    virtual num::Tensor encode(const std::string& text) const = 0;
    virtual int width() const = 0;
};

class VisualEncoder {
public:
    virtual ~VisualEncoder() = default;
    virtual num::Tensor encode(const io::Image& image) const = 0;
    virtual int width() const = 0;
};

class Embedder {
public:
    virtual ~Embedder() = default;
    // Unit-norm embedding.
    virtual num::Tensor embed(const io::Image& image) const = 0;
    virtual int width() const = 0;
};

std::uint64_t fnv1a64(const std::string& bytes);

// Whitespace tokens hashed into a fixed seeded table, plus sinusoidal
// position; capped at 16 rows. Frozen stand-in for a text backbone.
class ToyTextEncoder : public TextEncoder {
public:
    explicit ToyTextEncoder(int d = 32, std::uint64_t seed = 0x7e37, int max_tokens = 16);
    num::Tensor encode(const std::string& text) const override;
    int width() const override { return d_; }

private:
    int d_, max_tokens_;
    num::Tensor table_;
};

// Per-patch linear projection with a fixed seeded matrix. Patch size 1
// keeps one token per pixel.
class ToyVisualEncoder : public VisualEncoder {
public:
    explicit ToyVisualEncoder(int d = 32, int channels = 3, int patch = 1,
                              std::uint64_t seed = 0x715e);
    num::Tensor encode(const io::Image& image) const override;
    int width() const override { return d_; }

private:
    int d_, channels_, patch_;
    num::Tensor proj_, bias_;
};

// Mean-pooled visual tokens through a fixed projection, L2-normalized.
class ToyEmbedder : public Embedder {
public:
    explicit ToyEmbedder(int d = 32, int channels = 3, std::uint64_t seed = 0xe5bd);
    num::Tensor embed(const io::Image& image) const override;
    int width() const override { return d_; }

private:
    int d_;
    ToyVisualEncoder vis_;
    num::Tensor proj_;
};

// Per-sub texts encoded independently and stacked; spans address each block.
struct EncodedInstructionSet {
    num::Tensor tokens;                          // [sum n_tokens_i, d]
    std::vector<std::pair<int, int>> spans;      // (start, len) per sub
};

EncodedInstructionSet encode_instruction_set(const TextEncoder& enc,
                                             const std::vector<std::string>& sub_texts);

}  // namespace mcie::enc
