// Copyright 2026 The dafe-fd Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <fstream>
#include <iterator>
#include <sstream>

#include "dafe/annotations.hpp"
#include "dafe/config.hpp"
#include "dafe/error.hpp"
#include "dafe/image_io.hpp"
#include "dafe/model_io.hpp"
#include "dafe/pipeline.hpp"
#include "test_util.hpp"

namespace dafe {
namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

AnnotationSet parse_text(const std::string& text) {
  std::istringstream in(text);
  return parse_annotations(in, "fixture");
}

TEST(Annotations, TwoFaces) {
  const AnnotationSet s = parse_text(
      "0--Parade/a.jpg\n2\n449 330 122 149 0 0 0 0 0 0\n"
      "10 20 30 40 2 0 1 0 1 0\n");
  ASSERT_EQ(s.records.size(), 1u);
  EXPECT_EQ(s.records[0].image_path, "0--Parade/a.jpg");
  const auto b = s.records[0].boxes();
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b[0], (Box{449, 330, 571, 479}));
  EXPECT_EQ(b[1], (Box{10, 20, 40, 60}));
  EXPECT_EQ(s.records[0].faces[1].attributes[0], 2);
}

TEST(Annotations, CountZeroQuirkAndFiltering) {
  const AnnotationSet s = parse_text(
      "a.pgm\n0\n0 0 0 0 0 0 0 0 0 0\nb.pgm\n0\nc.pgm\n3\n"
      "1 1 5 5 0 0 0 1 0 0\n1 1 0 5 0 0 0 0 0 0\n2 2 6 6 0 0 0 0 0 0\n");
  ASSERT_EQ(s.records.size(), 3u);
  EXPECT_TRUE(s.records[0].faces.empty());
  EXPECT_TRUE(s.records[1].faces.empty());
  EXPECT_EQ(s.records[2].image_path, "c.pgm");
  EXPECT_EQ(s.records[2].faces.size(), 1u);
  EXPECT_EQ(s.filtered, 2u);
}

TEST(Annotations, MalformedInput) {
  try {
    parse_text("a.pgm\n1\n1 2 3 4 0 0 0 0 0\n");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("fixture:3:"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("9 fields"), std::string::npos);
  }
  EXPECT_THROW(parse_text("a.pgm\n2\n1 2 3 4 0 0 0 0 0 0\n"), FormatError);
  EXPECT_THROW(parse_text("a.pgm\n"), FormatError);
  EXPECT_THROW(parse_text("a.pgm\nx\n"), FormatError);
  EXPECT_THROW(parse_annotations(std::filesystem::path("/nonexistent/a.txt")), IoError);
}

TEST(Synthetic, DeterministicBoundedAndSeparated) {
  const auto a = testing::scratch_dir("synth_a"), b = testing::scratch_dir("synth_b");
  const auto ra = gen_synthetic(a, 6, 42);
  const auto rb = gen_synthetic(b, 6, 42);
  ASSERT_EQ(ra.size(), 6u);
  for (const auto& entry : std::filesystem::directory_iterator(a)) {
    EXPECT_EQ(slurp(entry.path()), slurp(b / entry.path().filename())) << entry.path();
  }
  const AnnotationSet parsed = parse_annotations(a / "annotations.txt");
  ASSERT_EQ(parsed.records.size(), ra.size());
  for (std::size_t i = 0; i < ra.size(); ++i) {
    const auto boxes = ra[i].boxes();
    EXPECT_EQ(parsed.records[i].boxes(), boxes);
    EXPECT_GE(boxes.size(), 1u);
    EXPECT_LE(boxes.size(), 8u);
    const Image img = read_pnm(a / ra[i].image_path);
    EXPECT_EQ(img.width, 128);
    EXPECT_EQ(img.height, 128);
    for (std::size_t p = 0; p < boxes.size(); ++p) {
      EXPECT_GE(boxes[p].x1, 0.0);
      EXPECT_GE(boxes[p].y1, 0.0);
      EXPECT_LE(boxes[p].x2, 128.0);
      EXPECT_LE(boxes[p].y2, 128.0);
      EXPECT_GE(boxes[p].width(), 8.0);
      EXPECT_LE(boxes[p].width(), 64.0);
      for (std::size_t q = p + 1; q < boxes.size(); ++q) EXPECT_LT(iou(boxes[p], boxes[q]), 0.3);
    }
  }
  const auto c = testing::scratch_dir("synth_c");
  gen_synthetic(c, 6, 43);
  EXPECT_NE(slurp(a / "annotations.txt"), slurp(c / "annotations.txt"));
}

TEST(Pnm, RoundTripGrayAndColour) {
  const auto dir = testing::scratch_dir("pnm");
  Image g{5, 3, 1, {}};
  for (int i = 0; i < 15; ++i) g.pixels.push_back(static_cast<std::uint8_t>(i * 17));
  write_pnm(dir / "g.pgm", g);
  const Image g2 = read_pnm(dir / "g.pgm");
  EXPECT_EQ(g2.pixels, g.pixels);
  EXPECT_EQ(read_pnm_size(dir / "g.pgm"), (std::pair<int, int>{5, 3}));
  Image c{2, 2, 3, std::vector<std::uint8_t>(12, 200)};
  write_pnm(dir / "c.ppm", c);
  EXPECT_EQ(read_pnm(dir / "c.ppm").channels, 3);
  const Tensor t = image_to_tensor(g2);
  EXPECT_EQ(t.shape(), (Shape{1, 1, 3, 5}));
  EXPECT_EQ(t.at(0, 0, 0, 0), -0.5);
  std::ofstream(dir / "bad.pgm") << "P5\n5 3\n255\nxx";
  EXPECT_THROW(read_pnm(dir / "bad.pgm"), Error);
}

RunConfig tiny_run_config() {
  RunConfig c;
  c.network.backbone.widths = {2, 3, 4, 4, 5};
  c.network.backbone.convs_per_block = 1;
  c.network.ffm_channels = 6;
  c.network.cam.dilations = {1, 2};
  return c;
}

void quantise(Network& net) {
  for (const ParamRef& p : net.parameters()) {
    for (double& v : p.value) v = static_cast<float>(v);
  }
}

TEST(ModelIo, RoundTripIsBitExactAtFloatPrecision) {
  const auto dir = testing::scratch_dir("model");
  const RunConfig cfg = tiny_run_config();
  Network net(cfg.network);
  net.init(17);
  net.alpha().value = 0.3;
  quantise(net);
  save_model(dir / "m.dafe", net, cfg);
  LoadedModel back = load_model(dir / "m.dafe");
  const auto pa = net.parameters(), pb = back.network.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    EXPECT_TRUE(std::equal(pa[i].value.begin(), pa[i].value.end(), pb[i].value.begin()));
  }
  std::mt19937_64 rng(5);
  Tensor img = testing::randn(Shape{1, 1, 50, 70}, rng, 0.3);
  PostprocessConfig post;
  post.score_threshold = 0.0;
  post.top_k = 50;
  const auto da = detect(net, img, post), db = detect(back.network, img, post);
  ASSERT_EQ(da.size(), db.size());
  ASSERT_FALSE(da.empty());
  for (std::size_t i = 0; i < da.size(); ++i) {
    EXPECT_EQ(da[i].box, db[i].box);
    EXPECT_EQ(da[i].score, db[i].score);
  }
}

TEST(ModelIo, QuantisationBound) {
  const auto dir = testing::scratch_dir("model_q");
  const RunConfig cfg = tiny_run_config();
  Network net(cfg.network);
  net.init(3);
  save_model(dir / "m.dafe", net, cfg);
  LoadedModel back = load_model(dir / "m.dafe");
  const auto pa = net.parameters(), pb = back.network.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    for (std::size_t k = 0; k < pa[i].value.size(); ++k) {
      EXPECT_LE(std::abs(pa[i].value[k] - pb[i].value[k]),
                std::abs(pa[i].value[k]) * 0x1p-24 + 1e-45);
    }
  }
}

TEST(ModelIo, CorruptionAndMismatch) {
  const auto dir = testing::scratch_dir("model_bad");
  const RunConfig cfg = tiny_run_config();
  Network net(cfg.network);
  net.init(1);
  save_model(dir / "m.dafe", net, cfg);
  const std::string bytes = slurp(dir / "m.dafe");
  for (std::size_t cut : {std::size_t{2}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    std::ofstream(dir / "t.dafe", std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(cut));
    EXPECT_THROW(load_model(dir / "t.dafe"), FormatError) << cut;
  }
  std::string bad = bytes;
  bad[0] = 'X';
  std::ofstream(dir / "magic.dafe", std::ios::binary) << bad;
  EXPECT_THROW(load_model(dir / "magic.dafe"), FormatError);
  bad = bytes;
  bad[4] = 9;
  std::ofstream(dir / "ver.dafe", std::ios::binary) << bad;
  EXPECT_THROW(load_model(dir / "ver.dafe"), FormatError);

  ModelFile file = load_model_file(dir / "m.dafe");
  RunConfig wide = cfg;
  wide.network.backbone.widths = {2, 3, 5, 4, 5};
  Network other(wide.network);
  EXPECT_THROW(restore(other, file), ShapeError);

  const std::string dropped = file.tensors.back().name;
  file.tensors.pop_back();
  try {
    restore(net, file);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(dropped), std::string::npos);
  }
}

TEST(RunConfigText, RoundTripAndUnknownKey) {
  RunConfig c = tiny_run_config();
  c.train.weights.lambda_d = 0.37;
  c.train.sgd.milestones = {10, 20};
  c.gaussian.sigma_mode = SigmaMode::fixed;
  c.gaussian.sigma_fixed = 3.25;
  c.network.fusion = DemFusion::concat;
  const std::string text = to_text(c);
  EXPECT_EQ(to_text(parse_run_config(text)), text);
  try {
    parse_run_config("loss.lambda_d = 1\nloss.lambda_q = 2\n", "cfg");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("cfg:2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_run_config("loss.lambda_d = -1\n"), ValueError);
}

TEST(RunConfigText, SigmaOption) {
  const GaussianSpec f = parse_sigma_option("fixed:4");
  EXPECT_EQ(f.sigma_mode, SigmaMode::fixed);
  EXPECT_EQ(f.sigma_fixed, 4.0);
  const GaussianSpec a = parse_sigma_option("adaptive:0.5");
  EXPECT_EQ(a.sigma_mode, SigmaMode::box_adaptive);
  EXPECT_EQ(a.adaptive_coeff, 0.5);
  EXPECT_THROW(parse_sigma_option("wide:3"), Error);
}

TEST(Jsonl, RoundTrip) {
  const auto dir = testing::scratch_dir("jsonl");
  const std::vector<Detection> d{{{1.0 / 3.0, 2.5, 10.125, 20.0}, 0.987654321, 2},
                                 {{0, 0, 4, 4}, 0.1, 1}};
  {
    std::ofstream out(dir / "d.jsonl");
    write_detections_jsonl(out, "img_a.pgm", d);
    write_detections_jsonl(out, "img_b.pgm", std::span(d).first(1));
  }
  const auto back = read_detections_jsonl(dir / "d.jsonl");
  ASSERT_EQ(back.size(), 2u);
  ASSERT_EQ(back.at("img_a.pgm").size(), 2u);
  EXPECT_EQ(back.at("img_a.pgm")[0].box, d[0].box);
  EXPECT_EQ(back.at("img_a.pgm")[0].score, d[0].score);
  EXPECT_EQ(back.at("img_a.pgm")[0].detector_id, 2);
  std::ofstream(dir / "bad.jsonl") << "{\"image\":\"a\",\"x1\":0,\"y1\":0,\"x2\":1,\"y2\":1,\"score\":1,\"detector\":1}\n{oops\n";
  try {
    read_detections_jsonl(dir / "bad.jsonl");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace dafe
