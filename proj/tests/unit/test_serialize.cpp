#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "perfbnn/serialize.hpp"

using namespace perfbnn;

namespace {

EnsembleModel small_model()
{
    EnsembleConfig cfg;
    cfg.predictive_samples = 40;
    auto ds = oracle::as_dataset(oracle::two_way_system(24, 2));
    ds.rows.col(9) = ds.rows.col(8); // forces a dropped column into the preprocessing report
    ds.schema = infer_schema(ds.schema.names(), ds.rows);
    return train_ensemble(ds, Hyperparams{1, 500, 0.01, 9, 0.01}, cfg, 5);
}

} // namespace

TEST(Serialize, ModelRoundTripIsByteIdentical)
{
    const EnsembleModel em = small_model();
    const std::string first = dump_json(json(em));
    const auto back = json::parse(first).get<EnsembleModel>();
    EXPECT_EQ(dump_json(json(back)), first);
    EXPECT_EQ(back.preprocess.retained_count, 9u);

    const auto rows = oracle::as_dataset(oracle::two_way_system(20, 99)).rows;
    const auto fa = forecast(em, rows), fb = forecast(back, rows);
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
        EXPECT_EQ(fa.prediction(i), fb.prediction(i));
        EXPECT_EQ(fa.interval(i, 80), fb.interval(i, 80));
    }
}

TEST(Serialize, RejectsCorruptModels)
{
    const json good = json(small_model());
    json j = good;
    j["format_version"] = 99;
    EXPECT_THROW(j.get<EnsembleModel>(), DataError);
    j = good;
    j["members"].erase(0);
    EXPECT_THROW(j.get<EnsembleModel>(), DataError);
    j = good;
    j["preprocess"]["retained_columns"][0] = 40;
    EXPECT_THROW(j.get<EnsembleModel>(), DataError);
}

TEST(Serialize, TraceRoundTripWithFailedScores)
{
    TuningTrace t;
    t.seed = 3;
    t.space = {4, 6};
    t.records = {{Hyperparams{1, 500, 0.01, 4, 0.1}, 12.5, 7, "depth"},
                 {Hyperparams{2, 1000, 0.002, 8, 0.5}, std::numeric_limits<double>::infinity(), 8, "final"}};
    t.depth_best = {12.5, std::numeric_limits<double>::infinity()};
    t.chosen_depth = 1;
    t.final_hyperparams = t.records[0].hyperparams;
    const std::string text = dump_json(json(t));
    EXPECT_NE(text.find("null"), std::string::npos);
    const auto back = json::parse(text).get<TuningTrace>();
    EXPECT_TRUE(std::isinf(back.records[1].score));
    EXPECT_TRUE(std::isinf(back.depth_best[1]));
    EXPECT_EQ(back.final_hyperparams, t.final_hyperparams);
    EXPECT_EQ(dump_json(json(back)), text);
}

TEST(Serialize, FileHelpers)
{
    const std::string path = ::testing::TempDir() + "perfbnn_serialize.json";
    write_text_file(path, "{\"a\": 1}\n");
    EXPECT_EQ(read_json_file(path)["a"], 1);
    write_text_file(path, "{broken");
    EXPECT_THROW(read_json_file(path), DataError);
    EXPECT_THROW(read_json_file(path + ".missing"), DataError);
    write_text_file(path, "{\"a\": 1}");
    EXPECT_THROW(load_json_as<TuningTrace>(path), DataError);
}
