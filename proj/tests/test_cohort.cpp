#include <gtest/gtest.h>

#include <sstream>

#include "test_support.hpp"

using namespace phenotensor;
namespace fs = std::filesystem;

namespace {

const char* kDemoHeader = "patient_id,diagnosis_date,death_date,age,sex,race,marital_status,insurance,zip\n";
const char* kEncHeader = "patient_id,encounter_id,date,kind,code\n";

struct RawFiles {
  std::string enc, demo, income;
};

RawFiles three_patient_files(const fs::path& dir) {
  RawFiles f;
  f.demo = pt_test::write_file(dir / "demo.csv", std::string(kDemoHeader) +
                                                     "P1,2010-01-01,2014-11-01,60,M,Black,Married,Medicare,60601\n"
                                                     "P2,2010-01-01,,55,F,White,,Private,60601\n"
                                                     "P3,2011-06-01,,70,F,White,Single,Medicaid,60601\n");
  f.income = pt_test::write_file(dir / "income.csv", "zip,median_income\n60601,50000\n");
  f.enc = pt_test::write_file(dir / "enc.csv", std::string(kEncHeader) +
                                                   "P1,E1,2010-01-05,DX,A\n"
                                                   "P1,E1,2010-01-05,MED,x\n"
                                                   "P2,E2,2010-02-01,DX,B\n");
  return f;
}

}  // namespace

TEST(LoadTables, ThreePatientsJoinIncome) {
  auto dir = pt_test::temp_dir("cohort_load");
  auto f = three_patient_files(dir);
  auto t = load_tables(f.enc, f.demo, f.income);
  ASSERT_EQ(t.demographics.size(), 3u);
  for (const auto& [id, c] : t.covariates) EXPECT_EQ(c.median_household_income, 50000);
  EXPECT_EQ(t.report.income_imputed, 0u);
  ASSERT_EQ(t.encounters.size(), 2u);
  EXPECT_EQ(t.encounters[0].diagnoses, std::vector<std::string>{"A"});
  EXPECT_EQ(t.encounters[0].medications, std::vector<std::string>{"x"});
}

TEST(LoadTables, CovariateCoding) {
  auto dir = pt_test::temp_dir("cohort_cov");
  auto f = three_patient_files(dir);
  auto t = load_tables(f.enc, f.demo, f.income);
  const auto& p1 = t.covariates.at("P1");
  EXPECT_EQ(p1.is_male, 1);
  EXPECT_EQ(p1.is_african_american, 1);
  EXPECT_EQ(p1.is_married, 1);
  EXPECT_EQ(p1.is_medicaid_medicare, 1);
  EXPECT_EQ(p1.age_at_diagnosis, 60);
  // Empty marital status is its own level, coded 0.
  EXPECT_EQ(t.demographics.at("P2").marital_status, kMissingLevel);
  EXPECT_EQ(t.covariates.at("P2").is_married, 0);
  EXPECT_EQ(t.covariates.at("P2").is_medicaid_medicare, 0);
  EXPECT_EQ(t.covariates.at("P3").is_medicaid_medicare, 1);
}

TEST(LoadTables, UnknownPatientNamesRow) {
  auto dir = pt_test::temp_dir("cohort_unknown");
  auto f = three_patient_files(dir);
  pt_test::write_file(f.enc, std::string(kEncHeader) + "P1,E1,2010-01-05,DX,A\nP9,E2,2010-01-05,DX,A\n");
  try {
    load_tables(f.enc, f.demo, f.income);
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find(":3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("P9"), std::string::npos) << msg;
  }
}

TEST(LoadTables, MissingIncomeImputedWithMedian) {
  auto dir = pt_test::temp_dir("cohort_income");
  auto f = three_patient_files(dir);
  pt_test::write_file(f.demo, std::string(kDemoHeader) +
                                  "P1,2010-01-01,,60,M,White,Married,Private,1\n"
                                  "P2,2010-01-01,,60,M,White,Married,Private,2\n"
                                  "P3,2010-01-01,,60,M,White,Married,Private,3\n"
                                  "P4,2010-01-01,,60,M,White,Married,Private,99\n");
  pt_test::write_file(f.income, "zip,median_income\n1,10\n2,20\n3,60\n");
  pt_test::write_file(f.enc, kEncHeader);
  auto t = load_tables(f.enc, f.demo, f.income);
  EXPECT_EQ(t.covariates.at("P4").median_household_income, 20);
  EXPECT_EQ(t.report.income_imputed, 1u);
  EXPECT_FALSE(t.report.notes.empty());
}

TEST(LoadTables, StructuralErrors) {
  auto dir = pt_test::temp_dir("cohort_errors");
  auto f = three_patient_files(dir);
  auto dup = pt_test::write_file(dir / "dup.csv", std::string(kDemoHeader) + "P1,2010-01-01,,60,M,,,,1\nP1,2010-01-01,,60,M,,,,1\n");
  EXPECT_THROW(load_tables(f.enc, dup, f.income), InputError);
  auto nocol = pt_test::write_file(dir / "nocol.csv", "patient_id,age\nP1,3\n");
  EXPECT_THROW(load_tables(f.enc, nocol, f.income), InputError);
  auto reuse = pt_test::write_file(dir / "reuse.csv", std::string(kEncHeader) + "P1,E1,2010-01-05,DX,A\nP2,E1,2010-01-05,DX,B\n");
  EXPECT_THROW(load_tables(reuse, f.demo, f.income), InputError);
}

TEST(LoadTables, BadRowsRejectedNotFatal) {
  auto dir = pt_test::temp_dir("cohort_reject");
  auto f = three_patient_files(dir);
  pt_test::write_file(f.enc, std::string(kEncHeader) + "P1,E1,notadate,DX,A\nP1,E2,2010-01-05,LAB,A\nP1,E3,2010-01-05,DX,A\n");
  auto t = load_tables(f.enc, f.demo, f.income);
  EXPECT_EQ(t.report.rejected_rows.size(), 2u);
  EXPECT_EQ(t.encounters.size(), 1u);
}

TEST(MedicationMapping, WorkedExamples) {
  std::istringstream in("# rules\nLIPITOR*\tatorvastatin\nhydrocodone-acetaminophen*\thydrocodone,acetaminophen\n");
  auto m = MedicationMapping::parse(in);
  EXPECT_EQ(m.map("LIPITOR 20MG TAB"), std::vector<std::string>{"atorvastatin"});
  EXPECT_EQ(m.map("hydrocodone-acetaminophen"), (std::vector<std::string>{"hydrocodone", "acetaminophen"}));
  EXPECT_EQ(m.map("widgetol"), std::vector<std::string>{"widgetol"});
}

TEST(MedicationMapping, FirstMatchWins) {
  std::istringstream in("LIPITOR 40*\tfirst\nLIPITOR*\tsecond\n");
  auto m = MedicationMapping::parse(in);
  EXPECT_EQ(m.map("lipitor 40mg"), std::vector<std::string>{"first"});
  EXPECT_EQ(m.map("lipitor 20mg"), std::vector<std::string>{"second"});
}

TEST(MedicationMapping, MalformedRuleNamesLine) {
  std::istringstream in("LIPITOR*\tatorvastatin\nno tab here\n");
  try {
    MedicationMapping::parse(in, "map.tsv");
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("map.tsv:2"), std::string::npos);
  }
  std::istringstream empty_generic("X*\t a, \n");
  EXPECT_THROW(MedicationMapping::parse(empty_generic), InputError);
}

TEST(MedicationMapping, NormalizeSplitsAndDedupes) {
  std::istringstream in("LIPITOR*\tatorvastatin\nVICODIN*\thydrocodone,acetaminophen\n");
  auto m = MedicationMapping::parse(in);
  CohortTable t;
  t.encounters.push_back({"P1", "E1", Date{0}, {"A"}, {"LIPITOR 20MG", "lipitor 40mg", "VICODIN", "acetaminophen"}});
  auto out = normalize_medication_names(t, m);
  EXPECT_EQ(out.encounters[0].medications, (std::vector<std::string>{"acetaminophen", "atorvastatin", "hydrocodone"}));
}

namespace {

CohortTable cohort_with_prevalence(std::size_t n, std::size_t with_code, const std::string& dx, const std::string& med) {
  CohortTable t;
  for (std::size_t p = 0; p < n; ++p) {
    PatientDemographics d;
    d.patient_id = "P" + std::to_string(1000 + p);
    t.demographics[d.patient_id] = d;
    EncounterRecord e{d.patient_id, "E" + std::to_string(p), Date{0}, {"COMMON"}, {"common"}};
    if (p < with_code) {
      if (!dx.empty()) e.diagnoses.push_back(dx);
      if (!med.empty()) e.medications.push_back(med);
    }
    t.encounters.push_back(e);
  }
  return t;
}

bool has_code(const CohortTable& t, const std::string& c) {
  for (const auto& e : t.encounters)
    for (const auto* list : {&e.diagnoses, &e.medications})
      if (std::find(list->begin(), list->end(), c) != list->end()) return true;
  return false;
}

}  // namespace

TEST(Prevalence, OnePercentBoundaryInclusive) {
  auto t = cohort_with_prevalence(100, 1, "RARE", "");
  auto out = filter_by_prevalence(t, {});
  EXPECT_TRUE(has_code(out, "RARE"));
  auto t2 = cohort_with_prevalence(101, 1, "RARE", "");
  EXPECT_FALSE(has_code(filter_by_prevalence(t2, {}), "RARE"));
}

TEST(Prevalence, ForcedMedicationKept) {
  auto t = cohort_with_prevalence(1000, 4, "", "tamoxifen");  // 0.4%
  EXPECT_FALSE(has_code(filter_by_prevalence(t, {}), "tamoxifen"));
  PrevalenceFilter f;
  f.forced_medications = {"tamoxifen"};
  EXPECT_TRUE(has_code(filter_by_prevalence(t, f), "tamoxifen"));
}

TEST(Prevalence, AllPrevalentUnchanged) {
  auto t = cohort_with_prevalence(10, 10, "A", "x");
  auto out = filter_by_prevalence(t, {});
  ASSERT_EQ(out.encounters.size(), t.encounters.size());
  for (std::size_t i = 0; i < t.encounters.size(); ++i) {
    EXPECT_EQ(out.encounters[i].diagnoses, t.encounters[i].diagnoses);
    EXPECT_EQ(out.encounters[i].medications, t.encounters[i].medications);
  }
}

TEST(Prevalence, ExclusionGlobsWithAllowList) {
  auto t = cohort_with_prevalence(10, 10, "V58.11", "x");
  for (auto& e : t.encounters) e.diagnoses.push_back("V10.3");
  PrevalenceFilter f;
  f.excluded_codes = {"V*"};
  f.allowed_codes = {"V10.3"};
  auto out = filter_by_prevalence(t, f);
  EXPECT_FALSE(has_code(out, "V58.11"));
  EXPECT_TRUE(has_code(out, "V10.3"));
  EXPECT_TRUE(has_code(out, "COMMON"));
}

TEST(Prevalence, InvalidFractions) {
  auto t = cohort_with_prevalence(10, 10, "A", "x");
  PrevalenceFilter f;
  f.dx_min_frac = 0;
  EXPECT_THROW(filter_by_prevalence(t, f), InputError);
  f.dx_min_frac = 1.5;
  EXPECT_THROW(filter_by_prevalence(t, f), InputError);
}

namespace {

CohortTable outcome_cohort() {
  CohortTable t;
  auto add = [&](const std::string& id, std::optional<Date> death) {
    PatientDemographics d;
    d.patient_id = id;
    d.diagnosis_date = *parse_date("2010-01-01");
    d.death_date = death;
    t.demographics[id] = d;
  };
  auto dx = *parse_date("2010-01-01");
  add("dies_4_9", add_days(dx, static_cast<std::int32_t>(4.9 * 365)));
  add("alive", std::nullopt);
  add("dies_6", add_days(dx, 6 * 365));
  add("dies_exactly_5", add_days(dx, 5 * 365));
  t.encounters.push_back({"alive", "E1", add_days(dx, 400), {"A"}, {"x"}});
  t.encounters.push_back({"alive", "E2", add_days(dx, 365), {"A"}, {"x"}});
  t.encounters.push_back({"alive", "E3", add_days(dx, -1), {"A"}, {"x"}});
  t.encounters.push_back({"alive", "E4", dx, {"A"}, {"x"}});
  return t;
}

}  // namespace

TEST(AssignOutcomes, LabelsAndWindow) {
  auto t = assign_outcomes(outcome_cohort());
  EXPECT_EQ(t.labels.at("dies_4_9"), 1);
  EXPECT_EQ(t.labels.at("alive"), 0);
  EXPECT_EQ(t.labels.at("dies_6"), 0);
  EXPECT_EQ(t.labels.at("dies_exactly_5"), 1);
  std::set<std::string> kept;
  for (const auto& e : t.encounters) kept.insert(e.encounter_id);
  EXPECT_EQ(kept, (std::set<std::string>{"E2", "E4"}));
  EXPECT_EQ(t.report.encounters_outside_window, 2u);
}

TEST(AssignOutcomes, MissingDiagnosisDate) {
  auto t = outcome_cohort();
  PatientDemographics d;
  d.patient_id = "nodate";
  t.demographics["nodate"] = d;
  auto out = assign_outcomes(t);
  EXPECT_EQ(out.demographics.count("nodate"), 0u);
  EXPECT_EQ(out.report.patients_without_diagnosis_date, 1u);

  t.encounters.push_back({"nodate", "E9", Date{0}, {"A"}, {}});
  EXPECT_THROW(assign_outcomes(t), InputError);
}

TEST(CohortDirectory, RoundTrip) {
  auto dir = pt_test::temp_dir("cohort_rt");
  auto f = three_patient_files(dir);
  auto t = assign_outcomes(load_tables(f.enc, f.demo, f.income));
  write_cohort(t, dir / "cohort");
  auto back = read_cohort(dir / "cohort");
  EXPECT_EQ(back.labels, t.labels);
  ASSERT_EQ(back.encounters.size(), t.encounters.size());
  for (std::size_t i = 0; i < t.encounters.size(); ++i) {
    EXPECT_EQ(back.encounters[i].encounter_id, t.encounters[i].encounter_id);
    EXPECT_EQ(back.encounters[i].diagnoses, t.encounters[i].diagnoses);
    EXPECT_EQ(back.encounters[i].medications, t.encounters[i].medications);
  }
  for (const auto& [id, c] : t.covariates) EXPECT_EQ(back.covariates.at(id).values(), c.values());
  EXPECT_EQ(back.demographics.at("P2").marital_status, kMissingLevel);
}
