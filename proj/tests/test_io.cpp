#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <random>
#include <unistd.h>

#include "nlos/forward.hpp"
#include "nlos/io.hpp"

using namespace nlos;
namespace fs = std::filesystem;

namespace {

class IoTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("nlos_io_" + std::to_string(::getpid()) + "_" +
                ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }
    fs::path dir_;
};

std::string slurp(const fs::path& p) { return detail::read_file(p); }

}  // namespace

TEST_F(IoTest, HeaderLayout) {
    const SceneGrid g = make_grid(3, 2, 4, 5, 0.75, 0.0125);
    TransientCube t(g);
    t.data(1, 2, 4) = -1.5;
    write_transient(dir_ / "a.ntra", t);
    const std::string b = slurp(dir_ / "a.ntra");
    ASSERT_EQ(b.size(), 36u + 4u * 2 * 3 * 5);
    EXPECT_EQ(b.substr(0, 4), "NTRA");
    std::uint32_t u32[4];
    std::memcpy(u32, b.data() + 4, 16);
    EXPECT_EQ(u32[0], 1u);
    EXPECT_EQ(u32[1], 2u);  // ny
    EXPECT_EQ(u32[2], 3u);  // nx
    EXPECT_EQ(u32[3], 5u);  // nt
    double geo[2];
    std::memcpy(geo, b.data() + 20, 16);
    EXPECT_EQ(geo[0], 0.75);
    EXPECT_EQ(geo[1], 0.0125);
    float last;
    std::memcpy(&last, b.data() + b.size() - 4, 4);
    EXPECT_EQ(last, -1.5f);
}

TEST_F(IoTest, RoundTripIsLossless) {
    const SceneGrid g = make_grid(7, 5, 6, 12, 1.0, 0.01);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n;
    VoxelAlbedo u(g);
    for (double& v : u.data.flat()) v = static_cast<float>(n(rng));
    write_volume(dir_ / "u.nvol", u);
    const VoxelAlbedo r = read_volume(dir_ / "u.nvol");
    EXPECT_EQ(r.data, u.data);
    EXPECT_EQ(r.grid.nt, 12u);
    write_volume(dir_ / "u2.nvol", r);
    EXPECT_EQ(slurp(dir_ / "u.nvol"), slurp(dir_ / "u2.nvol"));

    TransientCube t(g);
    for (double& v : t.data.flat()) v = n(rng);
    write_transient(dir_ / "t.ntra", t);
    const TransientCube rt = read_transient(dir_ / "t.ntra", 6);
    for (std::size_t i = 0; i < t.data.size(); ++i) EXPECT_EQ(rt.data[i], static_cast<float>(t.data[i]));
    write_transient(dir_ / "t2.ntra", rt);
    EXPECT_EQ(slurp(dir_ / "t.ntra"), slurp(dir_ / "t2.ntra"));
    EXPECT_EQ(read_transient(dir_ / "t.ntra").grid.nz, 6u);
}

TEST_F(IoTest, RejectsMalformedCubes) {
    const SceneGrid g = make_grid(2, 2, 2, 4, 1.0, 0.01);
    write_volume(dir_ / "v.nvol", VoxelAlbedo(g));
    EXPECT_THROW(read_transient(dir_ / "v.nvol"), DataError);
    std::string b = slurp(dir_ / "v.nvol");
    write_file_atomic(dir_ / "short.nvol", b.substr(0, b.size() - 4));
    EXPECT_THROW(read_volume(dir_ / "short.nvol"), DataError);
    write_file_atomic(dir_ / "hdr.nvol", b.substr(0, 20));
    EXPECT_THROW(read_volume(dir_ / "hdr.nvol"), DataError);
    std::string bad = b;
    bad[4] = 9;
    write_file_atomic(dir_ / "ver.nvol", bad);
    EXPECT_THROW(read_volume(dir_ / "ver.nvol"), DataError);
    EXPECT_THROW(read_volume(dir_ / "missing.nvol"), std::invalid_argument);
}

TEST_F(IoTest, AtomicWriteLeavesNoTemporaries) {
    write_file_atomic(dir_ / "x.txt", "one");
    write_file_atomic(dir_ / "x.txt", "two");
    EXPECT_EQ(slurp(dir_ / "x.txt"), "two");
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(dir_)) ++files, (void)e;
    EXPECT_EQ(files, 1u);
}

TEST(Io, MaskSpecs) {
    const ScanMask full = make_mask("full", 4, 6);
    EXPECT_EQ(full.count(), 24u);
    const ScanMask ev = make_mask("every_k:4", 32, 32);
    EXPECT_EQ(ev.count(), 64u);
    EXPECT_TRUE(ev(2, 2));
    EXPECT_TRUE(ev(30, 30));
    EXPECT_FALSE(ev(0, 0));
    EXPECT_EQ(make_mask("every_k:1", 5, 5).count(), 25u);
    EXPECT_EQ(make_mask("every_k:40", 32, 32).count(), 1u);
    const ScanMask r1 = make_mask("random:100:7", 32, 32);
    EXPECT_EQ(r1.count(), 100u);
    EXPECT_EQ(r1.raw(), make_mask("random:100:7", 32, 32).raw());
    EXPECT_NE(r1.raw(), make_mask("random:100:8", 32, 32).raw());
    for (const char* bad : {"every_k:0", "every_k:x", "random:0:1", "random:5", "random:2000:1",
                            "dense", "every_k:-2", "every_k:80"}) {
        EXPECT_THROW(make_mask(bad, 32, 32), std::invalid_argument) << bad;
    }
}

TEST_F(IoTest, MaskFileRoundTrip) {
    const ScanMask m = make_mask("random:9:3", 5, 7);
    write_mask(dir_ / "m.pbm", m);
    const std::string text = slurp(dir_ / "m.pbm");
    EXPECT_EQ(text.substr(0, 7), "P1\n7 5\n");
    EXPECT_EQ(read_mask(dir_ / "m.pbm").raw(), m.raw());
    write_file_atomic(dir_ / "c.pbm", "P1\n# comment\n2 1\n1 0\n");
    EXPECT_EQ(read_mask(dir_ / "c.pbm").count(), 1u);
    write_file_atomic(dir_ / "z.pbm", "P1\n2 1\n0 0\n");
    EXPECT_THROW(read_mask(dir_ / "z.pbm"), DataError);
    write_file_atomic(dir_ / "t.pbm", "P1\n2 2\n0 1\n");
    EXPECT_THROW(read_mask(dir_ / "t.pbm"), DataError);
    write_file_atomic(dir_ / "p.pbm", "P4\n2 1\n1 0\n");
    EXPECT_THROW(read_mask(dir_ / "p.pbm"), DataError);
}

TEST_F(IoTest, Pgm16) {
    Field2 img(2, 3);
    img[0] = 0.0, img[1] = 1.0, img[2] = 0.5, img[3] = 2.0, img[4] = -1.0, img[5] = 0.25;
    write_pgm16(dir_ / "i.pgm", img);
    const std::string b = slurp(dir_ / "i.pgm");
    EXPECT_EQ(b.substr(0, 13), "P5\n3 2\n65535\n");
    EXPECT_EQ(b.substr(13, 4), std::string("\0\0\xff\xff", 4));
    const Field2 r = read_pgm16(dir_ / "i.pgm");
    EXPECT_EQ(r[0], 0.0);
    EXPECT_EQ(r[1], 1.0);
    EXPECT_NEAR(r[2], 0.5, 1.0 / 65535);
    EXPECT_EQ(r[3], 1.0);
    EXPECT_EQ(r[4], 0.0);
}

TEST(Io, KeyValues) {
    const KeyValues kv = parse_key_values("a = 1\n# c\n\n b=two # trailing\n", "t");
    EXPECT_EQ(kv.at("a"), "1");
    EXPECT_EQ(kv.at("b"), "two");
    EXPECT_THROW(parse_key_values("a=1\na=2\n", "t"), std::invalid_argument);
    EXPECT_THROW(parse_key_values("novalue\n", "t"), std::invalid_argument);
    EXPECT_THROW(parse_key_values("=3\n", "t"), std::invalid_argument);
    EXPECT_EQ(format_key_values({{"x", "1"}, {"y", "z"}}), "x=1\ny=z\n");
    for (double v : {0.1, 1e-5, 3.0, 25.0, 1.0 / 3.0, -2.5e300}) {
        EXPECT_EQ(std::stod(format_double(v)), v);
    }
}

TEST(Io, RunConfig) {
    const RunConfig rc = parse_run_config(
        "sigma=2\nlambda=3e8\neta=0.1\nk_max=50\nnonneg_clamp=true\noperator=fft\nmask=every_k:4\n");
    EXPECT_EQ(rc.params.sigma, 2.0);
    EXPECT_EQ(rc.params.lambda, 3e8);
    EXPECT_EQ(rc.params.eta, 0.1);
    EXPECT_EQ(rc.params.k_max, 50);
    EXPECT_TRUE(rc.params.nonneg_clamp);
    EXPECT_EQ(rc.params.op, OperatorKind::fft);
    EXPECT_EQ(rc.mask, "every_k:4");
    EXPECT_EQ(rc.params.rho, 25.0);

    try {
        parse_run_config("lambda=1\n");
        FAIL();
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("sigma"), std::string::npos);
    }
    EXPECT_THROW(parse_run_config("sigma=1\n"), std::invalid_argument);
    EXPECT_THROW(parse_run_config("sigma=1\nlambda=1\nfoo=2\n"), std::invalid_argument);
    EXPECT_THROW(parse_run_config("sigma=1\nlambda=1\nrho=abc\n"), std::invalid_argument);
    EXPECT_THROW(parse_run_config("sigma=1\nlambda=1\nk_max=2.5\n"), std::invalid_argument);
    EXPECT_THROW(parse_run_config("sigma=1\nlambda=1\noperator=gpu\n"), std::invalid_argument);
    EXPECT_THROW(parse_run_config("sigma=1\nlambda=1\nnonneg_clamp=yes\n"), std::invalid_argument);
    EXPECT_THROW(parse_run_config("sigma=-1\nlambda=1\n"), std::invalid_argument);
    EXPECT_THROW(parse_run_config("sigma=1\nlambda=1\nnz=0\n"), std::invalid_argument);
}
