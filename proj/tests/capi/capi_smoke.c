/* Compiled as C to keep the public header C-clean. */
#include <math.h>
#include <stdio.h>

#include "ews/ews.h"

int main(void) {
  double s = 0.0, p = 0.0, f = 0.0;
  if (ews_severinghaus_sao2(100.0, &s) != EWS_OK) return 1;
  if (ews_ellis_pao2(s, &p) != EWS_OK || fabs(p - 100.0) > 1e-9) return 2;
  if (ews_fio2_from_supplemental(NULL, 2.0, &f) != EWS_OK || f != 0.34) return 3;
  if (ews_ellis_pao2(1.5, &p) != EWS_ERR_DOMAIN) return 4;
  printf("ews %s: ok\n", ews_version());
  return 0;
}
