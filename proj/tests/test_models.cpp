#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "doctest.h"
#include "nclab/checkpoint.hpp"
#include "nclab/errors.hpp"
#include "nclab/models.hpp"
#include "nclab/training.hpp"

using namespace nclab;

namespace {

Tensor random_batch(const InputShape& shape, std::size_t n, std::uint64_t seed, bool grad = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(n * shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return make_input_batch(shape, v, n, grad);
}

std::vector<double> flat_params(const Network& net) {
  std::vector<double> out;
  for (const auto& p : net.parameters()) out.insert(out.end(), p.value.data().begin(), p.value.data().end());
  return out;
}

double max_reconstruction_error(const Network& net, const Tensor& x) {
  const auto out = net.forward_with_taps(x);
  const auto [w, b] = net.classifier_params();
  const Tensor rebuilt = linear(out.taps.back(), w, b);
  double worst = 0.0;
  for (std::size_t i = 0; i < rebuilt.numel(); ++i)
    worst = std::max(worst, std::abs(rebuilt.data()[i] - out.logits.data()[i]));
  return worst;
}

}  // namespace

TEST_CASE("build_mlp parameter counts") {
  CHECK(build_mlp(20, std::vector<int>{}, 4, 1).parameter_count() == 20 * 4 + 4);
  CHECK(build_mlp(20, std::vector<int>{64, 64}, 4, 1).parameter_count() ==
        20 * 64 + 64 + 64 * 64 + 64 + 64 * 4 + 4);
  CHECK_THROWS_AS(build_mlp(20, std::vector<int>{-3}, 4, 1), ConfigError);
  CHECK_THROWS_AS(build_mlp(20, std::vector<int>{0}, 4, 1), ConfigError);
}

TEST_CASE("initialization") {
  Network a = build_mlp(20, std::vector<int>{64, 64}, 4, 9);
  Network b = build_mlp(20, std::vector<int>{64, 64}, 4, 9);
  Network c = build_mlp(20, std::vector<int>{64, 64}, 4, 10);
  CHECK(flat_params(a) == flat_params(b));
  CHECK(flat_params(a) != flat_params(c));

  // weights inside +-sqrt(6/(fan_in+fan_out)), biases zero
  const auto& params = a.parameters();
  const double bound0 = std::sqrt(6.0 / (20 + 64));
  for (double v : params[0].value.data()) CHECK(std::abs(v) <= bound0);
  for (double v : params[1].value.data()) CHECK(v == 0.0);
}

TEST_CASE("build_small_convnet") {
  Network net = build_small_convnet(std::vector<int>{8}, {1, 8, 8}, 2, 3);
  CHECK(net.penultimate_dim() == 128);
  CHECK(net.forward(random_batch({1, 8, 8}, 3, 1)).shape() == Shape{3, 2});
  CHECK_THROWS_AS(build_small_convnet(std::vector<int>{}, {1, 8, 8}, 2, 3), ConfigError);
  CHECK_THROWS_AS(build_small_convnet(std::vector<int>{4, 4}, {1, 6, 6}, 2, 3), ConfigError);
  CHECK(flat_params(build_small_convnet(std::vector<int>{4, 8}, {3, 8, 8}, 5, 4)) ==
        flat_params(build_small_convnet(std::vector<int>{4, 8}, {3, 8, 8}, 5, 4)));
}

TEST_CASE("forward") {
  Network net = build_mlp(6, std::vector<int>{5}, 3, 2);
  SUBCASE("zero classifier weights give the biases") {
    auto [w, b] = net.classifier_params();
    std::fill(w.mutable_data().begin(), w.mutable_data().end(), 0.0);
    const std::vector<double> bias{0.5, -1.0, 2.0};
    std::copy(bias.begin(), bias.end(), b.mutable_data().begin());
    Tensor logits = net.forward(random_batch({6}, 4, 3));
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t c = 0; c < 3; ++c) CHECK(logits.data()[i * 3 + c] == bias[c]);
  }
  SUBCASE("batch rows are independent") {
    Tensor x = random_batch({6}, 5, 4);
    Tensor all = net.forward(x);
    for (std::size_t i = 0; i < 5; ++i) {
      Tensor one = make_input_batch({6}, x.data().subspan(i * 6, 6), 1);
      Tensor row = net.forward(one);
      for (std::size_t c = 0; c < 3; ++c) CHECK(row.data()[c] == all.data()[i * 3 + c]);
    }
  }
  SUBCASE("input gradient matches finite differences") {
    std::vector<int> y{0, 1, 2};
    auto f = [&](const Tensor& x) { return softmax_cross_entropy(net.forward(x, ParamMode::kConstant), y); };
    CHECK(check_gradients(f, random_batch({6}, 3, 5), 1e-6) <= 1e-5);
  }
  SUBCASE("wrong input shape") {
    CHECK_THROWS_AS(net.forward(Tensor::zeros({2, 7})), DimensionError);
  }
  SUBCASE("constant mode leaves parameters out of the graph") {
    net.zero_grad();
    Tensor x = random_batch({6}, 2, 6, true);
    backward(softmax_cross_entropy(net.forward(x, ParamMode::kConstant), std::vector<int>{0, 1}));
    for (const auto& p : net.parameters())
      if (p.value.has_grad())
        for (double g : p.value.grad()) CHECK(g == 0.0);
    CHECK(x.has_grad());
  }
}

TEST_CASE("taps") {
  Network mlp = build_mlp(6, std::vector<int>{5, 4}, 3, 2);
  Tensor x = random_batch({6}, 4, 7);
  auto out = mlp.forward_with_taps(x);
  CHECK(out.taps.size() == 3);
  CHECK(mlp.tap_count() == 3);
  CHECK(out.taps[0].to_vector() == x.to_vector());  // identity normalization
  CHECK(out.taps.back().shape() == Shape{4, 4});
  CHECK(max_reconstruction_error(mlp, x) <= 1e-12);

  auto again = mlp.forward_with_taps(x);
  for (std::size_t t = 0; t < 3; ++t) CHECK(again.taps[t].to_vector() == out.taps[t].to_vector());

  Network conv = build_small_convnet(std::vector<int>{4, 6}, {2, 8, 8}, 3, 5);
  Tensor xi = random_batch({2, 8, 8}, 3, 8);
  auto cout = conv.forward_with_taps(xi);
  CHECK(cout.taps.size() == 3);
  CHECK(cout.taps[0].shape() == Shape{3, 2, 8, 8});
  CHECK(cout.taps[1].shape() == Shape{3, 4, 4, 4});
  CHECK(cout.taps[2].shape() == Shape{3, 6 * 2 * 2});
  CHECK(max_reconstruction_error(conv, xi) <= 1e-12);
}

TEST_CASE("classifier_params") {
  Network net = build_mlp(6, std::vector<int>{5}, 3, 2);
  auto [w, b] = net.classifier_params();
  CHECK(w.shape() == Shape{3, 5});
  CHECK(b.shape() == Shape{3});

  // liveness: an SGD step shows through the same handle
  const std::vector<double> before = w.to_vector();
  Tensor x = random_batch({6}, 4, 9);
  net.zero_grad();
  backward(softmax_cross_entropy(net.forward(x), std::vector<int>{0, 1, 2, 0}));
  sgd_step(net, 0.1, 0.9);
  CHECK(w.to_vector() != before);
  CHECK(net.classifier_params().first.to_vector() == w.to_vector());
}

TEST_CASE("property: tap/classifier consistency over random inputs") {
  Network net = build_mlp(10, std::vector<int>{16, 8}, 4, 12);
  Normalization norm;
  norm.mean = std::vector<double>(10, 0.3);
  norm.std = std::vector<double>(10, 0.7);
  net.set_normalization(norm);
  for (std::uint64_t s = 0; s < 20; ++s) CHECK(max_reconstruction_error(net, random_batch({10}, 5, 100 + s)) <= 1e-12);
}

TEST_CASE("property: shuffling batch rows shuffles logits rows") {
  Network net = build_small_convnet(std::vector<int>{3}, {1, 4, 4}, 3, 13);
  Tensor x = random_batch({1, 4, 4}, 6, 14);
  Tensor logits = net.forward(x);
  std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  std::vector<double> shuffled;
  for (auto i : perm) shuffled.insert(shuffled.end(), x.data().begin() + i * 16, x.data().begin() + (i + 1) * 16);
  Tensor out = net.forward(make_input_batch({1, 4, 4}, shuffled, 6));
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 3; ++c) CHECK(out.data()[r * 3 + c] == logits.data()[perm[r] * 3 + c]);
}

TEST_CASE("clone is independent") {
  Network net = build_mlp(4, std::vector<int>{3}, 2, 1);
  Network copy = net.clone();
  net.parameters()[0].value.mutable_data()[0] += 1.0;
  CHECK(copy.parameters()[0].value.data()[0] == net.parameters()[0].value.data()[0] - 1.0);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  Network net = build_small_convnet(std::vector<int>{4, 8}, {3, 8, 8}, 5, 21);
  Normalization norm;
  norm.mean = {0.1, 0.2, 0.3};
  norm.std = {0.25, 0.5, 1.0 / 3.0};
  net.set_normalization(norm);
  net.parameters()[0].value.mutable_data()[0] = 0.1 + 0.2;  // not representable in short decimal

  std::stringstream buf;
  save_checkpoint(net, buf);
  Network back = load_checkpoint(buf);
  CHECK(back.layers() == net.layers());
  CHECK(back.input_shape() == net.input_shape());
  CHECK(back.num_classes() == net.num_classes());
  CHECK(back.normalization() == net.normalization());
  REQUIRE(back.parameters().size() == net.parameters().size());
  for (std::size_t i = 0; i < net.parameters().size(); ++i) {
    CHECK(back.parameters()[i].name == net.parameters()[i].name);
    CHECK(back.parameters()[i].value.to_vector() == net.parameters()[i].value.to_vector());
  }
  Tensor x = random_batch({3, 8, 8}, 2, 3);
  CHECK(back.forward(x).to_vector() == net.forward(x).to_vector());
  CHECK_NOTHROW(require_same_architecture(back, net));

  SUBCASE("file path variant") {
    const auto path = std::filesystem::temp_directory_path() / "nclab_test_models.ckpt";
    save_checkpoint(net, path);
    CHECK(load_checkpoint(path).forward(x).to_vector() == net.forward(x).to_vector());
    std::filesystem::remove(path);
  }
  SUBCASE("architecture mismatch") {
    CHECK_THROWS_AS(require_same_architecture(back, build_small_convnet(std::vector<int>{4, 4}, {3, 8, 8}, 5, 21)),
                    FormatError);
  }
  SUBCASE("corrupt input") {
    std::string bytes = buf.str();
    std::stringstream bad(std::string("NOTACKPT") + bytes.substr(8));
    CHECK_THROWS_AS(load_checkpoint(bad), FormatError);
    std::stringstream shortened;
    save_checkpoint(net, shortened);
    std::string all = shortened.str();
    std::stringstream cut(all.substr(0, all.size() - 5));
    CHECK_THROWS_AS(load_checkpoint(cut), FormatError);
  }
}
