#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <unistd.h>

#include "readmit/checkpoint.hpp"

using namespace readmit;

namespace {

std::string temp_path(const char *stem) {
    return std::string("/tmp/readmit_ckpt_") + stem + "_" + std::to_string(::getpid()) + ".bin";
}

std::string slurp(const std::string &path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

EncoderState small_state(uint64_t seed) {
    EncoderConfig cfg;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_model = 8;
    cfg.max_len = 32;
    cfg.vocab_size = 19;
    auto s = EncoderState::init(cfg, seed);
    s.vocab_hash = 0xABCDEF0123456789ULL;
    return s;
}

} // namespace

TEST_CASE("checkpoint round-trips every tensor bit-exactly") {
    auto state = small_state(4);
    auto path = temp_path("roundtrip");
    save_checkpoint(path, state);
    auto back = load_checkpoint(path);

    CHECK(back.vocab_hash == state.vocab_hash);
    CHECK(back.config.d_model == state.config.d_model);
    CHECK(back.config.vocab_size == state.config.vocab_size);
    CHECK(back.config.dropout == doctest::Approx(state.config.dropout));
    REQUIRE(back.params.size() == state.params.size());
    for (size_t i = 0; i < state.params.size(); ++i) {
        CHECK(back.params[i].first == state.params[i].first);
        const auto &a = state.params[i].second;
        const auto &b = back.params[i].second;
        REQUIRE(a.rows() == b.rows());
        REQUIRE(a.cols() == b.cols());
        CHECK(std::memcmp(a.data(), b.data(), sizeof(float) * a.size()) == 0);
    }
    std::remove(path.c_str());
}

TEST_CASE("saving the same state twice produces byte-identical files") {
    auto state = small_state(9);
    auto p1 = temp_path("bytes1"), p2 = temp_path("bytes2");
    save_checkpoint(p1, state);
    save_checkpoint(p2, state);
    CHECK(slurp(p1) == slurp(p2));

    // and a round-trip re-save is also byte-identical
    auto back = load_checkpoint(p1);
    auto p3 = temp_path("bytes3");
    save_checkpoint(p3, back);
    CHECK(slurp(p1) == slurp(p3));
    std::remove(p1.c_str());
    std::remove(p2.c_str());
    std::remove(p3.c_str());
}

TEST_CASE("vocabulary hash is enforced on load") {
    auto state = small_state(2);
    auto path = temp_path("hash");
    save_checkpoint(path, state);
    CHECK_NOTHROW(load_checkpoint(path, state.vocab_hash));
    CHECK_NOTHROW(load_checkpoint(path)); // 0 = caller opts out of the check
    CHECK_THROWS_AS(load_checkpoint(path, 0x1111111111111111ULL), VocabHashMismatch);
    std::remove(path.c_str());
}

TEST_CASE("missing and malformed checkpoints raise typed errors") {
    CHECK_THROWS_AS(load_checkpoint("/tmp/definitely_not_here.ckpt"), MissingArtifact);

    auto state = small_state(3);
    auto path = temp_path("corrupt");
    save_checkpoint(path, state);

    // wrong magic
    {
        auto bytes = slurp(path);
        bytes[0] = 'X';
        std::ofstream(path, std::ios::binary).write(bytes.data(), (std::streamsize)bytes.size());
        CHECK_THROWS_AS(load_checkpoint(path), InvalidConfig);
    }
    // truncated tensor payload
    {
        save_checkpoint(path, state);
        auto bytes = slurp(path);
        bytes.resize(bytes.size() - 10);
        std::ofstream(path, std::ios::binary | std::ios::trunc)
            .write(bytes.data(), (std::streamsize)bytes.size());
        CHECK_THROWS_AS(load_checkpoint(path), InvalidConfig);
    }
    std::remove(path.c_str());
}

TEST_CASE("a loaded checkpoint drives the encoder identically to the original") {
    auto state = small_state(6);
    auto path = temp_path("forward");
    save_checkpoint(path, state);
    auto back = load_checkpoint(path);

    std::vector<int32_t> tokens{kClsId, 7, 9, 11, kSepId};
    std::vector<int32_t> segments{0, 1, 1, 2, 2};
    std::vector<int32_t> buckets{0, 0, 0, 2, 0};
    Rng r1(1), r2(1);
    auto b1 = bind<float>(nullptr, state);
    auto b2 = bind<float>(nullptr, back);
    auto h1 = encode<float>(nullptr, b1, tokens, segments, buckets, r1, false);
    auto h2 = encode<float>(nullptr, b2, tokens, segments, buckets, r2, false);
    float l1 = classification_logit<float>(nullptr, b1, h1.hidden)(0, 0);
    float l2 = classification_logit<float>(nullptr, b2, h2.hidden)(0, 0);
    CHECK(std::memcmp(&l1, &l2, sizeof(float)) == 0);
    std::remove(path.c_str());
}
