#include "aminet/data.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <random>
#include <set>
#include <sstream>

namespace aminet {
namespace {

std::size_t set_difference_size(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::string> out;
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out.size();
}

std::vector<Record> random_records(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.num_bags = n;
  spec.vocab_size = vocab;
  spec.key_tokens = {0};
  spec.min_bag_size = 1;
  spec.max_bag_size = 9;
  spec.positive_rate = 0.4;
  spec.seed = seed;
  return generate_synthetic(spec);
}

TEST(Record, CollapsesDuplicatesAndRejectsBadInput) {
  const Record r = make_record({"sweat", "pruritus", "sweat"}, 1);
  EXPECT_EQ(r.instances, (std::vector<std::string>{"pruritus", "sweat"}));
  EXPECT_THROW(make_record({}, 0), DataError);
  EXPECT_THROW(make_record({"a"}, 2), DataError);
  EXPECT_THROW(make_record({""}, 0), DataError);
}

TEST(Vocabulary, LexicographicIds) {
  const std::vector<Record> rs{make_record({"sweat", "pruritus"}, 0)};
  const Vocabulary v = build_vocabulary(rs);
  EXPECT_EQ(v.id("pruritus"), 1u);
  EXPECT_EQ(v.id("sweat"), 2u);
  EXPECT_EQ(v.size(), 3u);
  EXPECT_EQ(v.id("fever"), v.oov_id());
  EXPECT_EQ(v.token(2), "sweat");
  EXPECT_THROW(v.token(0), VocabularyError);
  EXPECT_EQ(build_vocabulary(rs), v);
}

TEST(Vocabulary, CountsPaddingInSize) {
  std::vector<Record> rs;
  for (std::size_t i = 0; i < 186; ++i) rs.push_back(make_record({"symptom" + std::to_string(i)}, 0));
  EXPECT_EQ(build_vocabulary(rs).size(), 187u);
}

TEST(Vocabulary, EmptyCorpusIsDataError) {
  EXPECT_THROW(build_vocabulary(std::vector<Record>{}), DataError);
}

TEST(EncodeAndPad, MasksAndPads) {
  const std::vector<Record> rs{make_record({"a", "b"}, 1), make_record({"c"}, 0)};
  const Vocabulary v = build_vocabulary(rs);
  const BagBatch b = encode_and_pad(rs, v, 4);
  EXPECT_EQ(b.row_mask(0), (std::vector<bool>{true, true, false, false}));
  EXPECT_EQ(b.ids(1)[0], v.id("c"));
  EXPECT_EQ(b.ids(1)[1], kPaddingId);
  EXPECT_EQ(b.labels, (std::vector<int>{1, 0}));
  EXPECT_NO_THROW(b.validate());
  EXPECT_THROW(encode_and_pad(rs, v, 1), DataError);
}

TEST(EncodeAndPad, ClinicalScaleWidths) {
  std::vector<std::string> seventeen, twenty_one;
  for (int i = 0; i < 17; ++i) seventeen.push_back("s" + std::to_string(i));
  for (int i = 0; i < 21; ++i) twenty_one.push_back("f" + std::to_string(i));
  const std::vector<Record> rs{make_record(seventeen, 0), make_record(twenty_one, 1)};
  const Vocabulary v = build_vocabulary(rs);
  EXPECT_EQ(encode_and_pad(std::span(rs).first(1), v, 17).max_instances, 17u);
  EXPECT_EQ(encode_and_pad(rs, v, 21).instance_count(1), 21u);
}

TEST(EncodeAndPad, EmptyRecordBecomesOovSentinel) {
  const std::vector<Record> rs{Record{{}, 1}};
  const Vocabulary v = build_vocabulary(std::vector<Record>{make_record({"x"}, 0)});
  const BagBatch b = encode_and_pad(rs, v, 3);
  EXPECT_EQ(b.ids(0)[0], v.oov_id());
  EXPECT_EQ(b.instance_count(0), 1u);
  EXPECT_NO_THROW(b.validate());
}

TEST(DatasetFile, ReadsWhatItWrites) {
  const std::vector<Record> rs{make_record({"a", "b"}, 1), make_record({"c"}, 0)};
  std::stringstream buffer;
  write_records(buffer, rs);
  EXPECT_EQ(parse_records(buffer, "mem"), rs);
}

TEST(DatasetFile, ReportsPathAndLine) {
  std::stringstream bad("{\"instances\": [\"a\"], \"label\": 1}\n{\"label\": 0}\n");
  try {
    parse_records(bad, "d.jsonl");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("d.jsonl:2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(read_records("/nonexistent/records.jsonl"), IoError);
}

TEST(Synthetic, EmptyKeySetGivesAllNegative) {
  SyntheticSpec spec;
  spec.num_bags = 50;
  spec.key_tokens = {};
  spec.positive_rate = 0.0;
  for (const auto& r : generate_synthetic(spec)) EXPECT_EQ(r.label, 0);
  spec.positive_rate = 0.3;
  EXPECT_THROW(generate_synthetic(spec), GenerationError);
}

TEST(Synthetic, LabelsFollowTheRuleExactly) {
  for (LabelRule rule : {LabelRule::kAnyKey, LabelRule::kCoOccurrence}) {
    SyntheticSpec spec;
    spec.num_bags = 400;
    spec.vocab_size = 40;
    spec.key_tokens = {3, 8};
    spec.rule = rule;
    spec.positive_rate = 0.25;
    spec.seed = 5;
    const auto records = generate_synthetic(spec);
    const auto keys = key_token_strings(spec);
    std::size_t positives = 0;
    for (const auto& r : records) {
      EXPECT_EQ(r.label, rule_label(r.instances, keys, rule));
      EXPECT_GE(r.instances.size(), spec.min_bag_size);
      EXPECT_LE(r.instances.size(), spec.max_bag_size);
      EXPECT_TRUE(std::is_sorted(r.instances.begin(), r.instances.end()));
      positives += static_cast<std::size_t>(r.label);
    }
    EXPECT_EQ(positives, 100u);
  }
}

TEST(Synthetic, KeyTokenMakesBagPositive) {
  const std::vector<std::string> keys{"t07"};
  EXPECT_EQ(rule_label({"t01", "t07"}, keys, LabelRule::kAnyKey), 1);
  EXPECT_EQ(rule_label({"t01", "t02"}, keys, LabelRule::kAnyKey), 0);
}

TEST(Synthetic, HitsTargetPositiveRate) {
  SyntheticSpec spec;
  spec.positive_rate = 0.112;
  spec.seed = 3;
  const auto records = generate_synthetic(spec);
  ASSERT_EQ(records.size(), 1000u);
  const double rate = static_cast<double>(std::count_if(records.begin(), records.end(),
                                                        [](const Record& r) { return r.label; })) /
                      1000.0;
  EXPECT_GE(rate, 0.092);
  EXPECT_LE(rate, 0.132);
}

TEST(Synthetic, DeterministicPerSeed) {
  SyntheticSpec spec;
  spec.num_bags = 100;
  spec.seed = 8;
  EXPECT_EQ(generate_synthetic(spec), generate_synthetic(spec));
  SyntheticSpec other = spec;
  other.seed = 9;
  EXPECT_NE(generate_synthetic(spec), generate_synthetic(other));
}

TEST(FeatureNoise, SingleSubstitution) {
  const std::vector<Record> rs{make_record({"t01", "t02", "t03", "t04", "t05"}, 1)};
  const Vocabulary v = build_vocabulary(random_records(200, 30, 1));
  const auto out = inject_feature_noise(rs, v, 1, 4);
  EXPECT_EQ(set_difference_size(rs[0].instances, out[0].instances), 1u);
  EXPECT_EQ(set_difference_size(out[0].instances, rs[0].instances), 1u);
  EXPECT_EQ(out[0].label, 1);
}

TEST(FeatureNoise, ShortRecordIsToppedUp) {
  const std::vector<Record> rs{make_record({"t01", "t02"}, 0)};
  const Vocabulary v = build_vocabulary(random_records(200, 30, 1));
  const auto out = inject_feature_noise(rs, v, 3, 4);
  EXPECT_EQ(out[0].instances.size(), 3u);
  EXPECT_EQ(set_difference_size(out[0].instances, rs[0].instances), 3u);
  EXPECT_EQ(set_difference_size(rs[0].instances, out[0].instances), 2u);
}

TEST(FeatureNoise, TooSmallVocabularyIsDataError) {
  const std::vector<Record> rs{make_record({"a", "b"}, 0)};
  const Vocabulary v = build_vocabulary(std::vector<Record>{make_record({"a", "b", "c"}, 0)});
  EXPECT_THROW(inject_feature_noise(rs, v, 2, 0), DataError);
  EXPECT_THROW(inject_feature_noise(rs, v, 6, 0), ConfigError);
}

TEST(FeatureNoise, ExactOnRandomRecords) {
  const auto rs = random_records(300, 60, 2);
  const Vocabulary v = build_vocabulary(rs);
  for (std::size_t n = 1; n <= 5; ++n) {
    const auto out = inject_feature_noise(rs, v, n, n);
    ASSERT_EQ(out.size(), rs.size());
    for (std::size_t i = 0; i < rs.size(); ++i) {
      EXPECT_EQ(set_difference_size(out[i].instances, rs[i].instances), n);
      EXPECT_EQ(set_difference_size(rs[i].instances, out[i].instances),
                std::min(n, rs[i].instances.size()));
      EXPECT_EQ(out[i].label, rs[i].label);
    }
    EXPECT_EQ(out, inject_feature_noise(rs, v, n, n));
  }
}

TEST(LabelNoise, FlipsExactCount) {
  const auto rs = random_records(10, 20, 3);
  EXPECT_EQ(inject_label_noise(rs, 0.0, 1), rs);
  const auto all = inject_label_noise(rs, 1.0, 1);
  for (std::size_t i = 0; i < rs.size(); ++i) EXPECT_NE(all[i].label, rs[i].label);
  const auto half = inject_label_noise(rs, 0.5, 1);
  std::size_t flips = 0;
  for (std::size_t i = 0; i < rs.size(); ++i) {
    flips += half[i].label != rs[i].label;
    EXPECT_EQ(half[i].instances, rs[i].instances);
  }
  EXPECT_EQ(flips, 5u);
}

TEST(Deletion, RemovesUpToN) {
  const std::vector<Record> rs{make_record({"a", "b", "c", "d", "e"}, 1),
                               make_record({"a", "b", "c"}, 0)};
  const auto two = delete_instances(rs, 2, 1);
  EXPECT_EQ(two[0].instances.size(), 3u);
  EXPECT_EQ(set_difference_size(two[0].instances, rs[0].instances), 0u);
  const auto five = delete_instances(rs, 5, 1);
  EXPECT_TRUE(five[1].instances.empty());
  EXPECT_EQ(five[0].label, 1);
  EXPECT_EQ(five[1].label, 0);
}

TEST(StratifiedFolds, OnePositivePerFold) {
  std::vector<int> labels(20, 0);
  std::fill_n(labels.begin(), 10, 1);
  const auto folds = stratified_folds(std::span<const int>(labels), 10, 1, 4);
  std::vector<int> pos(10, 0), total(10, 0);
  for (std::size_t i = 0; i < 20; ++i) {
    pos[folds[0][i]] += labels[i];
    total[folds[0][i]] += 1;
  }
  for (std::size_t f = 0; f < 10; ++f) {
    EXPECT_EQ(pos[f], 1);
    EXPECT_EQ(total[f], 2);
  }
}

TEST(StratifiedFolds, BalancedAndIndependentAcrossRepetitions) {
  std::mt19937_64 rng(6);
  std::vector<int> labels(137);
  for (auto& l : labels) l = std::bernoulli_distribution(0.2)(rng);
  const auto folds = stratified_folds(std::span<const int>(labels), 10, 2, 11);
  for (const auto& rep : folds) {
    std::vector<int> pos(10, 0), total(10, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      ASSERT_LT(rep[i], 10u);
      pos[rep[i]] += labels[i];
      total[rep[i]] += 1;
    }
    EXPECT_LE(*std::max_element(pos.begin(), pos.end()) - *std::min_element(pos.begin(), pos.end()), 1);
    EXPECT_LE(*std::max_element(total.begin(), total.end()) -
                  *std::min_element(total.begin(), total.end()),
              1);
  }
  EXPECT_NE(folds[0], folds[1]);
  EXPECT_EQ(folds, stratified_folds(std::span<const int>(labels), 10, 2, 11));
  EXPECT_NE(folds, stratified_folds(std::span<const int>(labels), 10, 2, 12));
}

TEST(StratifiedFolds, SmallClassIsDataError) {
  std::vector<int> labels(30, 0);
  labels[0] = labels[1] = 1;
  try {
    stratified_folds(std::span<const int>(labels), 10, 1, 0);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("2 positive"), std::string::npos) << e.what();
  }
}

TEST(StratifiedHoldout, KeepsBothClassesOnBothSides) {
  std::vector<int> labels(50, 0);
  labels[3] = labels[17] = labels[40] = 1;
  const Split s = stratified_holdout(std::span<const int>(labels), 0.1, 2);
  EXPECT_EQ(s.train.size() + s.holdout.size(), 50u);
  auto positives = [&](const std::vector<std::size_t>& idx) {
    return std::count_if(idx.begin(), idx.end(), [&](std::size_t i) { return labels[i] == 1; });
  };
  EXPECT_EQ(positives(s.holdout), 1);
  EXPECT_EQ(positives(s.train), 2);
}

}  // namespace
}  // namespace aminet
