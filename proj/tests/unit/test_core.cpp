#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "attnflow/archive.hpp"
#include "attnflow/error.hpp"
#include "attnflow/image.hpp"
#include "attnflow/rng.hpp"
#include "attnflow/tensor.hpp"

using namespace attnflow;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "attnflow_unit";
  fs::create_directories(dir);
  return dir / name;
}

Archive sample_archive() {
  Archive a;
  a.kind = "test";
  a.meta = {{"answer", 42}};
  Param p("layer.weight", {2, 3});
  for (std::size_t i = 0; i < 6; ++i) p.value[i] = 0.1 * static_cast<double>(i) - 1.0 / 3.0;
  a.add(p);
  a.add(TensorBlock{"perm", {3}, {2, 0, 1}});
  return a;
}

}  // namespace

TEST(Errors, ExitCodes) {
  EXPECT_EQ(exit_code_for(ErrorKind::config), 2);
  EXPECT_EQ(exit_code_for(ErrorKind::metric), 2);
  EXPECT_EQ(exit_code_for(ErrorKind::numerical), 3);
  EXPECT_EQ(exit_code_for(ErrorKind::io), 4);
  EXPECT_EQ(exit_code_for(ErrorKind::input), 4);
}

TEST(Rng, DerivedSeedsAreStableAndTagged) {
  EXPECT_EQ(derive_seed(1, "a"), derive_seed(1, "a"));
  EXPECT_NE(derive_seed(1, "a"), derive_seed(1, "b"));
  EXPECT_NE(derive_seed(1, "a"), derive_seed(2, "a"));
  Rng x = make_rng(5, "t"), y = make_rng(5, "t");
  EXPECT_EQ(x(), y());
}

TEST(Tensor, FiniteChecks) {
  FeatureMap m(1, 2, 2, 1.0);
  EXPECT_TRUE(m.all_finite());
  EXPECT_NO_THROW(require_finite(m, "m"));
  m.at(0, 1, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(require_finite(m, "m"), InputError);
  EXPECT_THROW(require_finite(FeatureMap{}, "empty"), InputError);
}

TEST(Archive, RoundTripIsExact) {
  const auto path = temp_file("roundtrip.bin");
  const Archive a = sample_archive();
  write_archive(a, path);
  const Archive b = read_archive(path);
  EXPECT_EQ(b.kind, "test");
  EXPECT_EQ(b.meta, a.meta);
  ASSERT_EQ(b.blocks.size(), 2u);
  EXPECT_EQ(b.blocks[0].values, a.blocks[0].values);
  EXPECT_EQ(b.blocks[0].shape, a.blocks[0].shape);
  Param p("layer.weight", {2, 3});
  restore_param(b, p);
  EXPECT_EQ(p.value, a.blocks[0].values);
  Param wrong("layer.weight", {3, 3});
  EXPECT_THROW(restore_param(b, wrong), ConfigError);
  Param missing("other", {1});
  EXPECT_THROW(restore_param(b, missing), ConfigError);
}

TEST(Archive, CorruptionDetected) {
  const auto path = temp_file("corrupt.bin");
  write_archive(sample_archive(), path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(40);
    f.put('\x7f');
  }
  EXPECT_THROW(read_archive(path), IoError);
  EXPECT_THROW(read_archive(temp_file("missing.bin")), IoError);
  std::ofstream(temp_file("garbage.bin")) << "not an archive";
  EXPECT_THROW(read_archive(temp_file("garbage.bin")), IoError);
}

TEST(Archive, NewerVersionRefusedNamingBoth) {
  const auto path = temp_file("newer.bin");
  Archive a = sample_archive();
  a.version = kArchiveFormatVersion + 1;
  write_archive(a, path);
  try {
    read_archive(path);
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(std::to_string(kArchiveFormatVersion + 1)), std::string::npos) << msg;
    EXPECT_NE(msg.find(std::to_string(kArchiveFormatVersion)), std::string::npos) << msg;
  }
}

TEST(Archive, Sha256KnownVector) {
  const std::string abc = "abc";
  EXPECT_EQ(sha256_hex(std::span<const std::uint8_t>(
                reinterpret_cast<const std::uint8_t*>(abc.data()), abc.size())),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Image, PngRoundTripAndRotation) {
  RgbImage img(5, 5);
  for (std::size_t y = 0; y < 5; ++y)
    for (std::size_t x = 0; x < 5; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<std::uint8_t>(y * 40 + x * 7 + c);
  const auto path = temp_file("img.png");
  write_png(img, path);
  EXPECT_TRUE(is_readable_image(path));
  EXPECT_EQ(read_image(path), img);

  EXPECT_EQ(rotate(img, 0.0), img);
  EXPECT_EQ(rotate(rotate(img, 90.0), 270.0), img);
  const RgbImage r = rotate(img, 90.0);
  // Counter-clockwise: the top-right pixel moves to the top-left.
  EXPECT_EQ(r.at(0, 0, 0), img.at(0, 4, 0));
  const RgbImage half = rotate(img, 180.0);
  EXPECT_EQ(half.at(0, 0, 1), img.at(4, 4, 1));
}

TEST(Image, UnreadableFileRejected) {
  const auto path = temp_file("fake.png");
  std::ofstream(path) << "definitely not a png";
  EXPECT_FALSE(is_readable_image(path));
  EXPECT_THROW(read_image(path), InputError);
}

TEST(Image, NormalisationUsesImageNetStatistics) {
  RgbImage img(2, 2, 255);
  const FeatureMap t = to_normalized_tensor(img);
  EXPECT_NEAR(t.at(0, 0, 0), (1.0 - 0.485) / 0.229, 1e-12);
  EXPECT_NEAR(t.at(2, 1, 1), (1.0 - 0.406) / 0.225, 1e-12);
  const auto scaled = preprocess(img, {8, 4});
  EXPECT_EQ(scaled[0].height(), 8u);
  EXPECT_EQ(scaled[1].width(), 4u);
}
