#include <doctest.h>

#include <sstream>
#include <stdexcept>

#include "csr/gradcheck.hpp"

using namespace csr;

TEST_SUITE("gradcheck") {
  TEST_CASE("relative error") {
    CHECK(relative_error(1.0, 1.0) == 0.0);
    CHECK(relative_error(2.0, 1.0) == 0.5);
    CHECK(relative_error(-1.0, 1.0) == 2.0);
    // Floor: both tiny.
    CHECK(relative_error(1e-9, 0.0) == doctest::Approx(1e-5));
    CHECK(relative_error(1e-9, 0.0, 1e-8) == doctest::Approx(0.1));
  }

  TEST_CASE("all suites pass at defaults") {
    const GradcheckReport r = run_gradcheck();
    CHECK(r.passed());
    REQUIRE(r.suites.size() == gradcheck_suite_names().size());
    for (const SuiteResult& s : r.suites) {
      INFO(s.name << " " << s.max_rel_error << " " << s.worst);
      CHECK(s.passed);
      CHECK(s.instances >= 20);
      CHECK(s.checks > 0);
      CHECK(s.max_rel_error < 1e-4);
    }
    std::istringstream text(r.to_text());
    std::string line;
    std::size_t lines = 0;
    while (std::getline(text, line)) {
      ++lines;
      CHECK(line.find("PASS") != std::string::npos);
    }
    CHECK(lines == r.suites.size());
  }

  TEST_CASE("an injected fault is caught in that suite only") {
    for (const std::string& name : {std::string("layer_conv"), std::string("constraint_nll"),
                                    std::string("total_loss_predicted")}) {
      GradcheckOptions opt;
      opt.instances = 3;
      opt.inject_fault = name;
      const GradcheckReport r = run_gradcheck(opt);
      CHECK_FALSE(r.passed());
      CHECK(r.worst_suite().name == name);
      for (const SuiteResult& s : r.suites) CHECK(s.passed == (s.name != name));
    }
    GradcheckOptions all;
    all.instances = 2;
    all.inject_fault = "all";
    const GradcheckReport r = run_gradcheck(all);
    for (const SuiteResult& s : r.suites) CHECK_FALSE(s.passed);
  }

  TEST_CASE("options are validated") {
    GradcheckOptions opt;
    opt.instances = 0;
    CHECK_THROWS_AS(run_gradcheck(opt), std::invalid_argument);
    opt = {};
    opt.step = 0;
    CHECK_THROWS_AS(run_gradcheck(opt), std::invalid_argument);
    opt = {};
    opt.inject_fault = "no_such_suite";
    CHECK_THROWS_AS(run_gradcheck(opt), std::invalid_argument);
  }
}
