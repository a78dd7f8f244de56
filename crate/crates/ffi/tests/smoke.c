#include <math.h>
#include <stdio.h>
#include <string.h>

#include "toptwo.h"

#define CHECK(cond)                                                     \
  do {                                                                  \
    if (!(cond)) {                                                      \
      const char *e = tt_last_error();                                  \
      fprintf(stderr, "line %d: %s (%s)\n", __LINE__, #cond, e ? e : ""); \
      return 1;                                                         \
    }                                                                   \
  } while (0)

int main(void) {
  tt_model gauss = {TT_GAUSSIAN, 1.0, -5.0, 5.0};
  double means[2] = {0.0, 1.0};
  tt_instance *inst = NULL;
  CHECK(tt_instance_new(&gauss, means, 2, &inst) == TT_OK);
  CHECK(tt_instance_k(inst) == 2 && tt_instance_best(inst) == 1);

  tt_solution *sol = NULL;
  CHECK(tt_solve_gamma_star(inst, &sol) == TT_OK);
  CHECK(fabs(tt_solution_gamma(sol) - 0.125) < 1e-9);
  double psi[2];
  CHECK(tt_solution_psi(sol, psi, 1) == TT_BUFFER_TOO_SMALL);
  CHECK(tt_solution_psi(sol, psi, 2) == TT_OK);
  CHECK(fabs(psi[0] + psi[1] - 1.0) < 1e-12);
  tt_solution_free(sol);
  tt_instance_free(inst);

  double dup[2] = {0.5, 0.5};
  CHECK(tt_instance_new(&gauss, dup, 2, &inst) == TT_INPUT);
  CHECK(strstr(tt_last_error(), "distinct") != NULL);

  tt_model bern = {TT_BERNOULLI, 0.0, 0.0, 0.0};
  tt_belief *b = NULL;
  CHECK(tt_belief_new(&bern, 3, TT_CONJUGATE, 0, 7, &b) == TT_OK);
  for (int n = 0; n < 200; n++) {
    size_t arm;
    CHECK(tt_belief_select(b, TT_TTTS, 0.5, &arm) == TT_OK);
    CHECK(tt_belief_update(b, arm, arm == 2 ? 1.0 : 0.0) == TT_OK);
  }
  double alpha[3];
  CHECK(tt_belief_alpha(b, alpha, 3) == TT_OK);
  CHECK(alpha[2] > 0.99);
  char *json = NULL;
  CHECK(tt_belief_to_json(b, &json) == TT_OK);
  CHECK(strstr(json, "\"beta\"") != NULL);
  tt_string_free(json);
  CHECK(tt_belief_n(b) == 200);
  tt_belief_free(b);
  tt_belief_free(NULL);

  printf("ok %s\n", tt_version());
  return 0;
}
