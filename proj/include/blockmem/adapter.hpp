#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "blockmem/rng.hpp"
#include "blockmem/types.hpp"

namespace blockmem {

/// Deterministic stand-in for the q/k/v projections of a trained model.
///
/// Every token id is mapped to a fixed pseudo-random embedding, which a fixed
/// per-(layer, head) random projection turns into key and value rows. Queries
/// share the key projection, so two occurrences of the same token id produce
/// identical keys and a query aligned with them — the property planted-
/// retrieval workloads rely on.
template <typename Scalar>
class SyntheticAdapter {
public:
    static constexpr int kEmbedDim = 256;

    SyntheticAdapter(std::uint64_t seed, ModelShape shape) : seed_(seed), shape_(shape) {
        shape.validate();
        key_proj_.resize(shape.n_layers);
        value_proj_.resize(shape.n_layers);
        for (int l = 0; l < shape.n_layers; ++l) {
            key_proj_[l].reserve(shape.n_heads);
            value_proj_[l].reserve(shape.n_heads);
            for (int h = 0; h < shape.n_heads; ++h) {
                key_proj_[l].push_back(
                    random_matrix(shape.head_dim, mix_tag(l, h, kKeyTag)));
                value_proj_[l].push_back(
                    random_matrix(shape.value_dim, mix_tag(l, h, kValueTag)));
            }
        }
    }

    const ModelShape& shape() const { return shape_; }
    std::uint64_t seed() const { return seed_; }

    /// q/k/v rows for `ids`, for one layer, with row i at abs_index
    /// start_abs + i.
    TokenBatch<Scalar> batch(int layer, std::span<const std::int64_t> ids,
                             Index start_abs) const {
        if (ids.empty()) throw StreamError("adapter: token batch must be non-empty");
        const Index n = static_cast<Index>(ids.size());
        Mat<Scalar> emb(n, kEmbedDim);
        for (Index i = 0; i < n; ++i) {
            Rng rng(hash_mix(seed_ ^ kEmbedTag, static_cast<std::uint64_t>(ids[i])));
            for (int c = 0; c < kEmbedDim; ++c)
                emb(i, c) = static_cast<Scalar>(rng.next_gaussian());
        }
        const Scalar norm = Scalar(1) / std::sqrt(Scalar(kEmbedDim));

        TokenBatch<Scalar> out;
        out.start_abs = start_abs;
        out.q.reserve(shape_.n_heads);
        out.k.reserve(shape_.n_heads);
        out.v.reserve(shape_.n_heads);
        for (int h = 0; h < shape_.n_heads; ++h) {
            Mat<Scalar> k = emb * key_proj_[layer][h].transpose() * norm;
            out.q.push_back(k);
            out.k.push_back(std::move(k));
            out.v.push_back(emb * value_proj_[layer][h].transpose() * norm);
        }
        return out;
    }

private:
    static constexpr std::uint64_t kEmbedTag = 0x6d62656b6f74ULL;
    static constexpr std::uint64_t kKeyTag = 1;
    static constexpr std::uint64_t kValueTag = 2;

    std::uint64_t mix_tag(int layer, int head, std::uint64_t role) const {
        std::uint64_t x = hash_mix(seed_, role);
        x = hash_mix(x, static_cast<std::uint64_t>(layer) + 1);
        return hash_mix(x, static_cast<std::uint64_t>(head) + 1);
    }

    Mat<Scalar> random_matrix(int rows, std::uint64_t seed) const {
        Rng rng(seed);
        Mat<Scalar> m(rows, kEmbedDim);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < kEmbedDim; ++c)
                m(r, c) = static_cast<Scalar>(rng.next_gaussian());
        return m;
    }

    std::uint64_t seed_;
    ModelShape shape_;
    std::vector<std::vector<Mat<Scalar>>> key_proj_;    // [layer][head]
    std::vector<std::vector<Mat<Scalar>>> value_proj_;  // [layer][head]
};

}  // namespace blockmem
