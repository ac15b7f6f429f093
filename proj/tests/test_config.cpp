#include "psk/config.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <optional>

using namespace psk;

namespace {

TrainConfig parse(const std::string& text)
{
    std::istringstream in(text);
    return parse_config(in);
}

std::optional<ErrorCode> code_of(const std::function<void()>& f, std::string* what = nullptr)
{
    try {
        f();
    } catch (const Error& e) {
        if (what) *what = e.what();
        return e.code();
    }
    return std::nullopt;
}

} // namespace

TEST(Config, Defaults)
{
    const TrainConfig c;
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.batch_size, 16);
    EXPECT_EQ(c.lr_stage1a, 1e-5);
    EXPECT_EQ(c.epochs_stage1a, 15);
    EXPECT_EQ(c.lr_stage1b, 1e-6);
    EXPECT_EQ(c.epochs_stage1b, 10);
    EXPECT_EQ(c.lr_stage2, 1e-4);
    EXPECT_EQ(c.lr_stage2_decay, 0.1);
    EXPECT_EQ(c.lr_stage2_step, 25);
    EXPECT_EQ(c.crop.crop_factor, 1.3);
    EXPECT_EQ(c.crop.center_sigma, 3.0);
    EXPECT_EQ(c.pair_angle_max_deg, 60.0);
    EXPECT_EQ(c.pairs_per_batch, 25);
    EXPECT_EQ(c.threads, 1);
}

TEST(Config, Schedules)
{
    const TrainConfig c;
    for (int e = 0; e < 15; ++e) EXPECT_EQ(c.lr_stage1(e), 1e-5);
    for (int e = 15; e < 25; ++e) EXPECT_EQ(c.lr_stage1(e), 1e-6);
    EXPECT_EQ(c.lr_stage2_at(0), 1e-4);
    EXPECT_EQ(c.lr_stage2_at(24), 1e-4);
    EXPECT_NEAR(c.lr_stage2_at(25), 1e-5, 1e-20);
    EXPECT_NEAR(c.lr_stage2_at(50), 1e-6, 1e-20);
    EXPECT_EQ(c.lr_stage0_at(c.lr_stage0_step - 1), c.lr_stage0);
    EXPECT_NEAR(c.lr_stage0_at(c.lr_stage0_step), c.lr_stage0 * c.lr_stage0_decay, 1e-20);
}

TEST(Config, ParsesKeysCommentsAndWhitespace)
{
    const auto c = parse("# header\n\nseed = 42\n  kind=dense   # trailing\nlr_stage2 = 3e-6\naugment = false\ncrop_factor = 1.5\n");
    EXPECT_EQ(c.seed, 42u);
    EXPECT_EQ(c.kind, RepresentationKind::Dense);
    EXPECT_EQ(c.lr_stage2, 3e-6);
    EXPECT_FALSE(c.crop.augment);
    EXPECT_EQ(c.crop.crop_factor, 1.5);
}

TEST(Config, FormatRoundTrip)
{
    TrainConfig c;
    c.seed = 9;
    c.kind = RepresentationKind::Dense;
    c.lr_stage2 = 1.0 / 3.0;
    c.weights.lambda_pose = 100;
    c.crop.black_background_prob = 0.25;
    c.warp_source_grad = false;
    const auto text = format_config(c);
    EXPECT_EQ(format_config(parse(text)), text);
    EXPECT_EQ(parse(text).lr_stage2, 1.0 / 3.0);
}

TEST(Config, UnknownKeyNamed)
{
    std::string what;
    EXPECT_EQ(code_of([] { parse("seed = 1\nlearning_rate = 0.1\n"); }, &what), ErrorCode::ConfigError);
    EXPECT_NE(what.find("learning_rate"), std::string::npos);
}

TEST(Config, BadValueNamesKey)
{
    std::string what;
    EXPECT_EQ(code_of([] { parse("batch_size = sixteen\n"); }, &what), ErrorCode::ConfigError);
    EXPECT_NE(what.find("batch_size"), std::string::npos);
    EXPECT_EQ(code_of([] { parse("augment = maybe\n"); }), ErrorCode::ConfigError);
    EXPECT_EQ(code_of([] { parse("kind = mesh\n"); }), ErrorCode::ConfigError);
    EXPECT_EQ(code_of([] { parse("lr_stage2 = 1e-4 x\n"); }), ErrorCode::ConfigError);
}

TEST(Config, MalformedLineAndValidation)
{
    EXPECT_EQ(code_of([] { parse("seed 1\n"); }), ErrorCode::ConfigError);
    EXPECT_EQ(code_of([] { parse("pair_angle_max = 200\n"); }), ErrorCode::ConfigError);
    EXPECT_EQ(code_of([] { parse("batch_size = 0\n"); }), ErrorCode::ConfigError);
    EXPECT_EQ(code_of([] { parse("lr_stage1a = -1\n"); }), ErrorCode::ConfigError);
    EXPECT_EQ(code_of([] { parse("scale_lo = 1.2\nscale_hi = 1.1\n"); }), ErrorCode::ConfigError);
}

TEST(Config, MissingFile)
{
    EXPECT_EQ(code_of([] { load_config((std::filesystem::temp_directory_path() / "psk_no_such.cfg").string()); }),
              ErrorCode::IoError);
}
