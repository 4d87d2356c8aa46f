/* Compiles the public header as C and exercises a few calls. */
#include <stdio.h>
#include <string.h>

#include "eac/eac.h"

int main(void) {
  const char* ids[] = {"a", "b", "c"};
  eac_pool* pool = NULL;
  size_t rows = 0, cols = 0;
  double buf[12];
  if (eac_pool_create(ids, 3, 4, 2, "lowrank", 1, &pool) != EAC_OK) return 1;
  if (eac_pool_shape(pool, &rows, &cols) != EAC_OK || rows != 3 || cols != 4) return 2;
  if (eac_pool_materialize(pool, buf, 12) != EAC_OK || buf[5] != 0.0) return 3;
  eac_pool_destroy(pool);
  if (eac_pool_create(ids, 3, 4, 9, "lowrank", 1, &pool) != EAC_ERR_ARGUMENT) return 4;
  if (strlen(eac_last_error()) == 0) return 5;
  printf("eac %s\n", eac_version());
  return 0;
}
