#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "grad_suite.hpp"
#include "test_support.hpp"
#include "vwerc/speaker_units.hpp"

using namespace vwerc;

namespace {

// The naive definition, written as a direct double loop over history.
SpeakerPartition partition_reference(const std::vector<std::string>& speakers,
                                     const std::string& current) {
    SpeakerPartition p;
    for (int i = 0; i < static_cast<int>(speakers.size()); ++i) {
        bool same = speakers[static_cast<std::size_t>(i)] == current;
        if (same) p.inner.push_back(i);
        if (!same) p.inter.push_back(i);
    }
    return p;
}

} // namespace

TEST_CASE("partition splits history by speaker identity") {
    {
        SpeakerPartition p = partition({"A", "B"}, "A"); // history of [A,B,A] at t=2
        CHECK(p.inner == std::vector<int>{0});
        CHECK(p.inter == std::vector<int>{1});
    }
    {
        SpeakerPartition p = partition({"A", "B", "A"}, "C"); // unseen speaker
        CHECK(p.inner.empty());
        CHECK(p.inter == std::vector<int>{0, 1, 2});
    }
    {
        SpeakerPartition p = partition({"A", "A", "A"}, "A"); // single party
        CHECK(p.inter.empty());
        CHECK(p.inner == std::vector<int>{0, 1, 2});
    }
    {
        SpeakerPartition p = partition({}, "A"); // empty history
        CHECK(p.inner.empty());
        CHECK(p.inter.empty());
    }
}

TEST_CASE("partition is total and disjoint on random speaker sequences") {
    Rng rng(77);
    const std::vector<std::string> names = {"a", "b", "c", "d"};
    for (int trial = 0; trial < 2000; ++trial) {
        const int n = rng.uniform_int(0, 12);
        std::vector<std::string> speakers;
        for (int i = 0; i < n; ++i) speakers.push_back(names[static_cast<std::size_t>(rng.uniform_int(0, 3))]);
        const std::string current = names[static_cast<std::size_t>(rng.uniform_int(0, 3))];

        SpeakerPartition p = partition(speakers, current);
        SpeakerPartition ref = partition_reference(speakers, current);
        CHECK(p.inner == ref.inner);
        CHECK(p.inter == ref.inter);

        std::vector<bool> seen(static_cast<std::size_t>(n), false);
        for (int i : p.inner) {
            CHECK_FALSE(seen[static_cast<std::size_t>(i)]);
            seen[static_cast<std::size_t>(i)] = true;
        }
        for (int i : p.inter) {
            CHECK_FALSE(seen[static_cast<std::size_t>(i)]);
            seen[static_cast<std::size_t>(i)] = true;
        }
        for (bool s : seen) CHECK(s);
    }
}

TEST_CASE("empty subset reduces the unit to layer norm of g_t") {
    Rng rng(31);
    const int d = 8;
    SpeakerUnitParams p = init_speaker_unit(d, rng);
    // non-trivial layer norm parameters
    for (float& v : p.ln_g.values()) v = rng.uniform(0.5f, 1.5f);
    for (float& v : p.ln_b.values()) v = rng.uniform(-0.5f, 0.5f);
    Tensor g_t = gradsuite::random_tensor({d}, rng);

    Tape tape(false);
    Tensor o = speaker_unit_forward(tape, g_t, {}, p, 2);
    Tensor expected = layer_norm(tape, g_t, p.ln_g, p.ln_b, kLayerNormEps);
    for (int j = 0; j < d; ++j) CHECK(o.at(j) == expected.at(j));
}

TEST_CASE("single-row subset ignores the attention score") {
    Rng rng(32);
    const int d = 8;
    SpeakerUnitParams a = init_speaker_unit(d, rng);
    SpeakerUnitParams b = a;
    b.attn.wq = gradsuite::random_tensor({d, d}, rng); // only the query projection differs
    Tensor g_t = gradsuite::random_tensor({d}, rng);
    Tensor row = gradsuite::random_tensor({d}, rng);

    Tape tape(false);
    Tensor oa = speaker_unit_forward(tape, g_t, {row}, a, 2);
    Tensor ob = speaker_unit_forward(tape, g_t, {row}, b, 2);
    for (int j = 0; j < d; ++j) CHECK(oa.at(j) == Catch::Approx(ob.at(j)).margin(1e-6));
}

TEST_CASE("unit output matches the by-hand attention oracle") {
    Rng rng(33);
    const int d = 8, n_heads = 2;
    for (int trial = 0; trial < 8; ++trial) {
        SpeakerUnitParams p = init_speaker_unit(d, rng);
        Tensor g_t = gradsuite::random_tensor({d}, rng);
        const int n = rng.uniform_int(1, 3);
        std::vector<Tensor> G;
        for (int i = 0; i < n; ++i) G.push_back(gradsuite::random_tensor({d}, rng));

        Tape tape(false);
        Tensor o = speaker_unit_forward(tape, g_t, G, p, n_heads);

        // oracle: double-precision attention, then c + g_t, then layer norm
        Tensor keys({n, d});
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) keys.at(i, j) = G[static_cast<std::size_t>(i)].at(j);
        Tensor query({1, d});
        for (int j = 0; j < d; ++j) query.at(0, j) = g_t.at(j);
        const auto c = testsup::mha_reference(query, keys, p.attn, n_heads);
        std::vector<double> pre(static_cast<std::size_t>(d));
        double mean = 0.0;
        for (int j = 0; j < d; ++j) {
            pre[static_cast<std::size_t>(j)] = c[0][static_cast<std::size_t>(j)] + g_t.at(j);
            mean += pre[static_cast<std::size_t>(j)];
        }
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double dx = pre[static_cast<std::size_t>(j)] - mean;
            var += dx * dx;
        }
        var /= d;
        const double inv = 1.0 / std::sqrt(var + static_cast<double>(kLayerNormEps));
        for (int j = 0; j < d; ++j) {
            const double expected = (pre[static_cast<std::size_t>(j)] - mean) * inv * p.ln_g.at(j) + p.ln_b.at(j);
            CHECK(o.at(j) == Catch::Approx(expected).margin(1e-5));
        }
    }
}

TEST_CASE("unit output is invariant to permutations of G rows") {
    Rng rng(34);
    const int d = 8;
    SpeakerUnitParams p = init_speaker_unit(d, rng);
    Tensor g_t = gradsuite::random_tensor({d}, rng);
    std::vector<Tensor> G;
    for (int i = 0; i < 4; ++i) G.push_back(gradsuite::random_tensor({d}, rng));

    Tape tape(false);
    Tensor base = speaker_unit_forward(tape, g_t, G, p, 2);
    std::vector<Tensor> perm = {G[2], G[0], G[3], G[1]};
    Tensor shuffled = speaker_unit_forward(tape, g_t, perm, p, 2);
    for (int j = 0; j < d; ++j) CHECK(shuffled.at(j) == Catch::Approx(base.at(j)).margin(1e-6));
}

TEST_CASE("gradients reach both units when both subsets are nonempty") {
    Rng rng(35);
    const int d = 8;
    SpeakerUnitParams inner = init_speaker_unit(d, rng);
    SpeakerUnitParams inter = init_speaker_unit(d, rng);
    Tensor g_t = gradsuite::random_tensor({d}, rng);
    std::vector<Tensor> G_inner = {gradsuite::random_tensor({d}, rng)};
    std::vector<Tensor> G_inter = {gradsuite::random_tensor({d}, rng),
                                   gradsuite::random_tensor({d}, rng)};
    Tensor head = gradsuite::random_tensor({2 * d, 3}, rng);

    Tape tape;
    Tensor o_inner = speaker_unit_forward(tape, g_t, G_inner, inner, 2);
    Tensor o_inter = speaker_unit_forward(tape, g_t, G_inter, inter, 2);
    Tensor z = fuse(tape, o_inner, o_inter);
    Tensor logits = take_row(tape, matmul(tape, stack_rows(tape, {z}), head), 0);
    Tensor loss = cross_entropy(tape, softmax(tape, logits), 0);
    tape.backward(loss);

    auto grad_norm = [](const Tensor& t) {
        double acc = 0.0;
        for (float g : t.grad()) acc += static_cast<double>(g) * g;
        return std::sqrt(acc);
    };
    CHECK(grad_norm(inner.attn.wv) > 0.0);
    CHECK(grad_norm(inter.attn.wv) > 0.0);
    CHECK(grad_norm(inner.ln_g) > 0.0);
    CHECK(grad_norm(inter.ln_g) > 0.0);
}

TEST_CASE("fuse concatenates inter first, inner second") {
    Tape tape(false);
    Tensor o_inner({2}, {3, 4});
    Tensor o_inter({2}, {1, 2});
    Tensor z = fuse(tape, o_inner, o_inter);
    CHECK(z.values() == std::vector<float>{1, 2, 3, 4});

    Tensor zero2({2});
    CHECK(fuse(tape, zero2, zero2).values() == std::vector<float>{0, 0, 0, 0});

    Tensor swapped = fuse(tape, o_inter, o_inner);
    CHECK(swapped.values() != z.values());
}
