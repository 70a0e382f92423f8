#include "trifuse/autodiff.hpp"
#include "trifuse/gradcheck.hpp"
#include "trifuse/params.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

using namespace trifuse;
namespace fs = std::filesystem;

namespace {

Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng, double scale = 1.0)
{
    std::normal_distribution<double> n(0.0, scale);
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) {
        m.data()[i] = n(rng);
    }
    return m;
}

fs::path temp_file(const std::string& name)
{
    return fs::temp_directory_path() / ("trifuse_unit_" + name);
}

} // namespace

TEST_SUITE("numcore")
{
    TEST_CASE("dense examples")
    {
        Tape tape;
        auto row = [](std::initializer_list<double> v) {
            Matrix m(1, static_cast<Index>(v.size()));
            Index i = 0;
            for (double x : v) {
                m(0, i++) = x;
            }
            return m;
        };
        const Var x = tape.constant(row({3, -1}));
        const Var identity = dense(x, tape.constant(Matrix(Matrix::Identity(2, 2))),
                                   tape.constant(Matrix(Matrix::Zero(1, 2))));
        CHECK(identity.value() == row({3, -1}));

        const Var zero_w = dense(tape.constant(row({7, 9})), tape.constant(Matrix(Matrix::Zero(2, 2))),
                                 tape.constant(row({1, 2})));
        CHECK(zero_w.value() == row({1, 2}));

        Matrix w(2, 2);
        w << 1, 2, 3, 4;
        const Var y = dense(tape.constant(row({1, 1})), tape.constant(w),
                            tape.constant(Matrix(Matrix::Zero(1, 2))));
        CHECK(y.value() == row({3, 7}));
    }

    TEST_CASE("dense shape mismatch names both shapes")
    {
        Tape tape;
        const Var x = tape.constant(Matrix(Matrix::Zero(2, 3)));
        const Var w = tape.constant(Matrix(Matrix::Zero(4, 5)));
        const Var b = tape.constant(Matrix(Matrix::Zero(1, 4)));
        try {
            dense(x, w, b);
            FAIL("expected ShapeError");
        } catch (const ShapeError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("2x3") != std::string::npos);
            CHECK(msg.find("4x5") != std::string::npos);
        }
    }

    TEST_CASE("sigmoid values")
    {
        Matrix x(1, 3);
        x << 0.0, 1e3, std::log(3.0);
        const Matrix y = sigmoid_value(x);
        CHECK(y(0, 0) == 0.5);
        CHECK(std::abs(y(0, 1) - 1.0) <= 1e-12);
        CHECK(y(0, 1) < 1.0);
        CHECK(y(0, 2) == doctest::Approx(0.75).epsilon(1e-15));
    }

    TEST_CASE("softmax values and shift invariance")
    {
        Vector c = Vector::Constant(3, 2.5);
        const Vector u = softmax_value(c);
        for (Index i = 0; i < 3; ++i) {
            CHECK(std::abs(u(i) - 1.0 / 3.0) <= 1e-15);
        }
        Vector v(2);
        v << 0.0, std::log(3.0);
        const Vector s = softmax_value(v);
        CHECK(std::abs(s(0) - 0.25) <= 1e-15);
        CHECK(std::abs(s(1) - 0.75) <= 1e-15);

        std::mt19937_64 rng(7);
        std::uniform_real_distribution<double> shift(-50.0, 50.0);
        for (int trial = 0; trial < 100; ++trial) {
            const Vector x = random_matrix(1, 10, rng, 3.0).transpose();
            const double c0 = shift(rng);
            const Vector a = softmax_value(x);
            const Vector b = softmax_value((x.array() + c0).matrix());
            CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-12);
        }
    }

    TEST_CASE("attention examples")
    {
        Tape tape;
        std::mt19937_64 rng(3);
        const Matrix v1 = random_matrix(1, 4, rng);
        const Var single = scaled_dot_attention(tape.constant(random_matrix(1, 4, rng)),
                                                tape.constant(random_matrix(1, 4, rng)),
                                                tape.constant(v1));
        CHECK(single.value() == v1);

        const Matrix v = random_matrix(5, 3, rng);
        const Var uniform = scaled_dot_attention(tape.constant(Matrix(Matrix::Zero(5, 3))),
                                                 tape.constant(random_matrix(5, 3, rng)),
                                                 tape.constant(v));
        const Matrix mean = v.colwise().mean();
        for (Index r = 0; r < 5; ++r) {
            CHECK((uniform.value().row(r) - mean).cwiseAbs().maxCoeff() <= 1e-14);
        }

        // Two tokens, d = 2: q0 = [1, 0], q1 = [0, 1], k0 = [1, 0], k1 = [0, 0].
        Matrix q(2, 2), k(2, 2), vv(2, 2);
        q << 1, 0, 0, 1;
        k << 1, 0, 0, 0;
        vv << 1, 2, 3, 4;
        const Var out = scaled_dot_attention(tape.constant(q), tape.constant(k), tape.constant(vv));
        const double e = std::exp(1.0 / std::sqrt(2.0));
        const double w0 = e / (e + 1.0);
        CHECK(out.value()(0, 0) == doctest::Approx(w0 * 1 + (1 - w0) * 3).epsilon(1e-14));
        CHECK(out.value()(0, 1) == doctest::Approx(w0 * 2 + (1 - w0) * 4).epsilon(1e-14));
        CHECK(out.value()(1, 0) == doctest::Approx(2.0).epsilon(1e-14));
        CHECK(out.value()(1, 1) == doctest::Approx(3.0).epsilon(1e-14));
    }

    TEST_CASE("token attention equals per-block attention")
    {
        std::mt19937_64 rng(11);
        const Index tokens = 4;
        const Matrix q = random_matrix(3 * tokens, 5, rng);
        const Matrix k = random_matrix(3 * tokens, 5, rng);
        const Matrix v = random_matrix(3 * tokens, 5, rng);
        Tape tape;
        const Var all = token_attention(tape.constant(q), tape.constant(k), tape.constant(v), tokens);
        for (Index b = 0; b < 3; ++b) {
            const Var one = scaled_dot_attention(tape.constant(Matrix(q.middleRows(b * tokens, tokens))),
                                                 tape.constant(Matrix(k.middleRows(b * tokens, tokens))),
                                                 tape.constant(Matrix(v.middleRows(b * tokens, tokens))));
            CHECK((all.value().middleRows(b * tokens, tokens) - one.value()).cwiseAbs().maxCoeff() <=
                  1e-14);
        }
    }

    TEST_CASE("grad check of a linear loss is exact")
    {
        ParamStore params;
        std::mt19937_64 rng(1);
        params.add("theta", random_matrix(3, 4, rng));
        const auto result = grad_check(params, {"theta"}, [](Tape& t) { return sum(t.param("theta")); });
        CHECK(result.checked == 12);
        CHECK(result.max_relative_error <= 1e-10);
    }

    TEST_CASE("grad check over every op")
    {
        ParamStore params;
        std::mt19937_64 rng(5);
        params.add("w", random_matrix(6, 6, rng, 0.5));
        params.add("b", random_matrix(1, 6, rng, 0.1));
        params.add("x", random_matrix(3, 6, rng));
        params.add("s", random_matrix(3, 1, rng));
        const LossBuilder loss = [](Tape& t) {
            const Var h = dense(t.param("x"), t.param("w"), t.param("b"));
            const Var a = sigmoid(h);
            const Var r = relu(sub(h, scale(a, 0.3)));
            const Var e = exp(scale(a, 0.5));
            const Var sq = square(t.param("s"));
            const Var d = divide_rows(scale_rows(add(r, e), sq), add(sq, exp(t.param("s"))));
            const Var seq = reshape(concat_cols({d, hadamard(a, e)}), 6, 6);
            const Var att = token_attention(matmul_nt(seq, t.param("w")),
                                            matmul_nt(seq, t.param("w")), seq, 2);
            const Var sm = softmax_rows(add_row(att, t.constant(Matrix(Matrix::Ones(1, 6)))));
            return add(mean(square(sm)), mean(hadamard(att, att)));
        };
        const auto result = grad_check(params, {"w", "b", "x", "s"}, loss);
        CHECK(result.checked > 0);
        CHECK(result.max_relative_error <= 1e-6);
    }

    TEST_CASE("grad check catches a wrong gradient")
    {
        ParamStore params;
        std::mt19937_64 rng(2);
        params.add("theta", random_matrix(2, 3, rng));
        const LossBuilder loss = [](Tape& t) {
            const Var p = t.param("theta");
            Matrix y = p.value().array().square().matrix();
            const auto pi = p.id();
            const Var sq = t.record(std::move(y), {p}, [pi](Tape& tp, std::size_t self) {
                tp.accumulate(pi, 3.0 * tp.grad(self).cwiseProduct(tp.value(pi)));
            });
            return sum(sq);
        };
        const auto result = grad_check(params, {"theta"}, loss);
        CHECK_FALSE(result.passed(1e-4));
    }

    TEST_CASE("forward pass is bitwise deterministic")
    {
        std::mt19937_64 rng(9);
        const Matrix x = random_matrix(4, 8, rng);
        const Matrix w = random_matrix(8, 8, rng);
        auto run = [&] {
            Tape tape;
            const Var h = sigmoid(matmul_nt(tape.constant(x), tape.constant(w)));
            return softmax_rows(token_attention(reshape(h, 8, 4), reshape(h, 8, 4), reshape(h, 8, 4), 2))
                .value();
        };
        CHECK(run() == run());
    }

    TEST_CASE("fan-in init is reproducible and bounded")
    {
        const Matrix a = fan_in_uniform(16, 25, 42, "layer.weight");
        const Matrix b = fan_in_uniform(16, 25, 42, "layer.weight");
        const Matrix c = fan_in_uniform(16, 25, 42, "other.weight");
        CHECK(a == b);
        CHECK(a != c);
        CHECK(a.cwiseAbs().maxCoeff() <= 1.0 / 5.0);
    }

    TEST_CASE("backward zeroes gradients off the loss path")
    {
        ParamStore params;
        params.add("used", Matrix::Ones(1, 2));
        params.add("unused", Matrix::Ones(1, 2));
        params.grad("unused").setConstant(5.0);
        Tape tape = Tape::training(params);
        tape.backward(sum(tape.param("used")));
        CHECK(params.grad("used") == Matrix::Ones(1, 2));
        CHECK(params.grad("unused") == Matrix::Zero(1, 2));
    }

    TEST_CASE("checkpoint round trip")
    {
        ParamStore params;
        std::mt19937_64 rng(4);
        params.add("a.weight", random_matrix(3, 5, rng));
        params.add("a.bias", random_matrix(1, 3, rng));
        const auto path = temp_file("ckpt_roundtrip.bin");
        save_checkpoint(path, params, {{"note", "x"}});

        ParamStore loaded;
        loaded.add("a.weight", Matrix::Zero(3, 5));
        loaded.add("a.bias", Matrix::Zero(1, 3));
        const auto meta = load_checkpoint(path, loaded);
        CHECK(meta["note"] == "x");
        CHECK(read_checkpoint_metadata(path)["note"] == "x");
        CHECK(loaded.value("a.weight") == params.value("a.weight"));
        CHECK(loaded.value("a.bias") == params.value("a.bias"));
        fs::remove(path);
    }

    TEST_CASE("checkpoint rejects mismatched stores")
    {
        ParamStore params;
        params.add("a.weight", Matrix::Ones(2, 2));
        const auto path = temp_file("ckpt_reject.bin");
        save_checkpoint(path, params, {});

        ParamStore wrong_shape;
        wrong_shape.add("a.weight", Matrix::Zero(2, 3));
        CHECK_THROWS(load_checkpoint(path, wrong_shape));

        ParamStore missing;
        missing.add("a.weight", Matrix::Zero(2, 2));
        missing.add("b.weight", Matrix::Zero(1, 1));
        CHECK_THROWS(load_checkpoint(path, missing));

        ParamStore fewer;
        CHECK_THROWS(load_checkpoint(path, fewer));

        {
            std::ofstream out(path, std::ios::binary | std::ios::trunc);
            out << "not a checkpoint";
        }
        ParamStore any;
        any.add("a.weight", Matrix::Zero(2, 2));
        CHECK_THROWS(load_checkpoint(path, any));
        fs::remove(path);
    }

    TEST_CASE("tape rejects foreign variables")
    {
        Tape a;
        Tape b;
        const Var x = a.constant(Matrix(Matrix::Ones(1, 2)));
        const Var y = b.constant(Matrix(Matrix::Ones(1, 2)));
        CHECK_THROWS(add(x, y));
    }
}
