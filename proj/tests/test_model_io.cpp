#include <gtest/gtest.h>

#include <filesystem>

#include "support.hpp"
#include "xai_triage/model_io.hpp"

using namespace xai_triage;
using testing_support::Rng;
using testing_support::random_tensor;

namespace {

Network three_layer_net() {
  Rng rng(21);
  return Network({Layer::conv2d(random_tensor(rng, {2, 1, 3, 3}, -1, 1),
                                random_tensor(rng, {2}, -1, 1), 1, 1),
                  Layer::relu(), Layer::flatten(),
                  Layer::dense(random_tensor(rng, {3, 32}, -1, 1), random_tensor(rng, {3}, -1, 1))},
                 {1, 4, 4}, {"broken", "flash", "healthy"});
}

}  // namespace

TEST(ModelIo, RoundTripIsBitExact) {
  const Network net = three_layer_net();
  const std::string bytes = serialize_model(net);
  const Network back = parse_model(bytes);
  EXPECT_TRUE(back == net);
  EXPECT_EQ(back.layer(0).padding, 1u);
  EXPECT_EQ(back.class_names(), net.class_names());
  EXPECT_EQ(serialize_model(back), bytes);
}

TEST(ModelIo, RoundTripThroughFile) {
  const auto dir = testing_support::scratch_dir("model_io");
  const Network net = three_layer_net();
  save_model(net, (dir / "m.model").string());
  EXPECT_TRUE(load_model((dir / "m.model").string()) == net);
  EXPECT_THROW(load_model((dir / "missing.model").string()), Error);
}

TEST(ModelIo, PoolingHyperparametersPreserved) {
  const Network net({Layer::maxpool(2, 1), Layer::avgpool(3, 2), Layer::flatten(),
                     Layer::dense(Tensor(Shape{2, 4}, 0.5), Tensor(Shape{2}))},
                    {1, 6, 6});
  const Network back = parse_model(serialize_model(net));
  EXPECT_EQ(back.layer(0).window, 2u);
  EXPECT_EQ(back.layer(0).stride, 1u);
  EXPECT_EQ(back.layer(1).window, 3u);
  EXPECT_EQ(back.layer(1).stride, 2u);
}

TEST(ModelIo, TruncatedFileIsParseError) {
  const std::string bytes = serialize_model(three_layer_net());
  try {
    parse_model(bytes.substr(0, bytes.size() - 3));
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::parse);
    EXPECT_EQ(e.byte_offset(), bytes.size() - 3);
  }
  EXPECT_THROW(parse_model(bytes.substr(0, 10)), ParseError);
  EXPECT_THROW(parse_model(""), ParseError);
  EXPECT_THROW(parse_model(bytes + "x"), ParseError);
}

TEST(ModelIo, HeaderErrorsCarryOffsets) {
  std::string bytes = serialize_model(three_layer_net());
  const auto at = bytes.find("relu");
  bytes.replace(at, 4, "relx");
  try {
    parse_model(bytes);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.byte_offset(), at);
  }
  EXPECT_THROW(parse_model("not-a-model 1\n"), ParseError);
}

TEST(ModelIo, ShapeInconsistencyIsValidationError) {
  std::string bytes = serialize_model(three_layer_net());
  const auto at = bytes.find("input_shape 1 4 4");
  bytes.replace(at, 17, "input_shape 2 4 4");
  try {
    parse_model(bytes);
    FAIL() << "expected validation error";
  } catch (const ParseError&) {
    FAIL() << "shape problems are validation errors";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::validation);
  }
}

TEST(ModelIo, RelevanceDumpRoundTrip) {
  Rng rng(2);
  const Tensor r = random_tensor(rng, {3, 5, 4}, -1, 1);
  const Tensor back = parse_relevance(serialize_relevance(r));
  ASSERT_EQ(back.shape(), r.shape());
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_EQ(back[i], static_cast<double>(static_cast<float>(r[i])));
  EXPECT_THROW(parse_relevance("xai-triage-relevance 1\nshape 2\nfloats 2\nend\nabc"), ParseError);
}
