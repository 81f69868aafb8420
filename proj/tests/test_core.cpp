#include <gtest/gtest.h>

#include "support.hpp"

using namespace vebm;

namespace {

Dataset two_by_two()
{
    Dataset d;
    d.values = Matrix{{0.1, 0.2}, {1.1, 0.9}};
    d.observed = Mask::Constant(2, 2, true);
    d.labels = {Label::Control, Label::Patient};
    d.feature_names = {"a", "b"};
    return d;
}

} // namespace

TEST(ValidateDataset, AcceptsMinimalValidDataset)
{
    EXPECT_NO_THROW(validate_dataset(two_by_two()));
}

TEST(ValidateDataset, RejectsNonFiniteObservedCell)
{
    Dataset d = two_by_two();
    d.values(1, 0) = std::nan("");
    EXPECT_THROW(validate_dataset(d), Error);
}

TEST(ValidateDataset, IgnoresValuesAtMissingCells)
{
    Dataset d = two_by_two();
    d.values(1, 0) = std::nan("");
    d.observed(1, 0) = false;
    EXPECT_NO_THROW(validate_dataset(d));
}

TEST(ValidateDataset, AllControlLabelsReportNoPatientGroup)
{
    Dataset d = two_by_two();
    d.labels = {Label::Control, Label::Control};
    try {
        validate_dataset(d);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_STREQ(e.what(), "no patient group");
    }
    EXPECT_NO_THROW(validate_dataset(d, false));
}

TEST(ValidateDataset, RejectsDimensionMismatch)
{
    Dataset d = two_by_two();
    d.labels.push_back(Label::Patient);
    EXPECT_THROW(validate_dataset(d), Error);
    d = two_by_two();
    d.observed = Mask::Constant(3, 2, true);
    EXPECT_THROW(validate_dataset(d), Error);
    d = two_by_two();
    d.feature_names = {"only one"};
    EXPECT_THROW(validate_dataset(d), Error);
}

TEST(LogSumExp, AnalyticValues)
{
    const std::vector<double> zeros{0.0, 0.0};
    EXPECT_DOUBLE_EQ(log_sum_exp(zeros), std::log(2.0));
    const std::vector<double> big{1000.0, 1000.0};
    EXPECT_DOUBLE_EQ(log_sum_exp(big), 1000.0 + std::log(2.0));
}

TEST(LogSumExp, MatchesDirectSummation)
{
    const std::vector<double> v{-1.0, 2.0, 0.5};
    EXPECT_NEAR(log_sum_exp(v), std::log(std::exp(-1.0) + std::exp(2.0) + std::exp(0.5)), 1e-14);
}

TEST(LogSumExp, EmptyVectorIsAnError)
{
    EXPECT_THROW(log_sum_exp(std::vector<double>{}), Error);
}

TEST(LogSumExp, AllMinusInfinity)
{
    const double ninf = -std::numeric_limits<double>::infinity();
    EXPECT_EQ(log_sum_exp(std::vector<double>{ninf, ninf}), ninf);
}

TEST(LogSumExp, ShiftInvarianceProperty)
{
    Rng rng(101);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.below(20);
        std::vector<double> v(n), w(n);
        const double c = rng.uniform(-500.0, 500.0);
        for (std::size_t k = 0; k < n; ++k) {
            v[k] = rng.uniform(-50.0, 50.0);
            w[k] = v[k] + c;
        }
        EXPECT_NEAR(log_sum_exp(w), log_sum_exp(v) + c, 1e-10 * (1.0 + std::abs(c)));
    }
}

TEST(Rng, SameSeedSameStream)
{
    Rng a(42), b(42);
    for (int k = 0; k < 100; ++k) EXPECT_EQ(a.next(), b.next());
    Rng d(42), e(43);
    EXPECT_NE(d.next(), e.next());
}

TEST(Rng, UniformStaysInUnitInterval)
{
    Rng rng(7);
    double lo = 1.0, hi = 0.0, sum = 0.0;
    const int n = 100000;
    for (int k = 0; k < n; ++k) {
        const double u = rng.uniform();
        lo = std::min(lo, u);
        hi = std::max(hi, u);
        sum += u;
    }
    EXPECT_GE(lo, 0.0);
    EXPECT_LT(hi, 1.0);
    EXPECT_NEAR(sum / n, 0.5, 0.01);
}

TEST(Rng, SplitStreamsDiffer)
{
    Rng root(5);
    Rng a = root.split();
    Rng b = root.split();
    EXPECT_NE(a.next(), b.next());
}

TEST(EventSequence, RejectsNonPermutations)
{
    EXPECT_THROW(EventSequence({0, 0}), Error);
    EXPECT_THROW(EventSequence({0, 2}), Error);
    EXPECT_THROW(EventSequence({-1, 0}), Error);
    EXPECT_NO_THROW(EventSequence({1, 0}));
}

TEST(EventSequence, PositionsInvertOrder)
{
    const EventSequence s({2, 0, 1});
    EXPECT_EQ(s.positions(), (std::vector<int>{1, 2, 0}));
    const Matrix m = s.as_matrix();
    EXPECT_EQ(m(0, 2), 1.0);
    EXPECT_EQ(m(1, 0), 1.0);
    EXPECT_EQ(m.sum(), 3.0);
}

TEST(SoftPermutation, ValidatesMarginals)
{
    EXPECT_NO_THROW(SoftPermutation(Matrix::Constant(3, 3, 1.0 / 3.0)));
    EXPECT_THROW(SoftPermutation(Matrix::Constant(3, 3, 0.5)), Error);
    Matrix neg{{1.5, -0.5}, {-0.5, 1.5}};
    EXPECT_THROW(SoftPermutation{neg}, Error);
    EXPECT_THROW(SoftPermutation(Matrix::Constant(2, 3, 0.5)), Error);
}

TEST(ModelConfig, DefaultsAndValidation)
{
    const ModelConfig c;
    EXPECT_EQ(c.tau, 1.0);
    EXPECT_EQ(c.tau_prior, 1.0);
    EXPECT_EQ(c.n_s, 20);
    EXPECT_EQ(c.n_opt, 200);
    EXPECT_EQ(c.learning_rate, 0.1);
    EXPECT_FALSE(c.use_gumbel_noise);
    ModelConfig bad;
    bad.tau = 0.0;
    EXPECT_THROW(bad.validate(), Error);
    bad = ModelConfig{};
    bad.n_s = 0;
    EXPECT_THROW(bad.validate(), Error);
}

TEST(ExpClamped, MatchesExpAboveTheClamp)
{
    const Matrix x{{0.0, -1.0}, {-699.0, -800.0}};
    const Matrix y = exp_clamped(x);
    EXPECT_DOUBLE_EQ(y(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(y(0, 1), std::exp(-1.0));
    EXPECT_DOUBLE_EQ(y(1, 0), std::exp(-699.0));
    EXPECT_DOUBLE_EQ(y(1, 1), std::exp(-700.0));
}

TEST(ParallelFor, VisitsEveryIndexOnceAndPropagatesErrors)
{
    std::vector<int> hits(1000, 0);
    parallel_for(hits.size(), 4, [&](std::size_t k) { hits[k] += 1; });
    EXPECT_TRUE(std::ranges::all_of(hits, [](int h) { return h == 1; }));
    EXPECT_THROW(parallel_for(10, 3,
                              [](std::size_t k) {
                                  if (k == 7) throw Error("boom");
                              }),
                 Error);
}
