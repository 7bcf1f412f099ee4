/* C interface for the cellchar standard-cell characterization toolkit.
 *
 * Handles are opaque; every fallible call returns a cc_status code and
 * leaves a human-readable message retrievable with cc_last_error() on the
 * calling thread. */

#ifndef CELLCHAR_H
#define CELLCHAR_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

enum cc_status {
  CC_OK = 0,
  CC_INVALID_ARGUMENT = 1,
  CC_PARSE_ERROR = 2,
  CC_IO_ERROR = 3,
  CC_NUMERIC_ERROR = 4,
};

/* Opaque handles. */
typedef struct cc_catalog cc_catalog;
typedef struct cc_models cc_models;

/* Technology parameter point. third_axis is temperature in degC for
 * silicon45 and gate unit capacitance in nF/cm^2 for flexible. */
typedef struct cc_corner {
  double vdd;
  double vth;
  double third_axis;
} cc_corner;

/* One characterized stimulus point. Times are ps (silicon45) or ns
 * (flexible); energies fJ; leakage nW. Fields that do not apply to the
 * arc kind are zero. */
typedef struct cc_char_point {
  double delay;
  double out_slew;
  double flip_energy;
  double non_flip_energy;
  double leakage_power;
  int degenerate;
} cc_char_point;

const char *cc_version(void);
const char *cc_last_error(void);

int cc_catalog_default(const char *technology, cc_catalog **out);
void cc_catalog_free(cc_catalog *catalog);
size_t cc_catalog_cell_count(const cc_catalog *catalog);
int cc_catalog_cell_name(const cc_catalog *catalog, size_t index, char *buf,
                         size_t cap);
int cc_catalog_arc_count(const cc_catalog *catalog, const char *cell,
                         size_t *out);

int cc_characterize(const cc_catalog *catalog, const char *cell,
                    size_t arc_index, const cc_corner *corner, double slew,
                    double load, cc_char_point *out);
int cc_pin_capacitance(const cc_catalog *catalog, const char *cell, size_t pin,
                       const cc_corner *corner, double *out);

int cc_oracle_library_write(const cc_catalog *catalog, const cc_corner *corner,
                            size_t n_slew, size_t n_load, const char *path);

int cc_models_load(const char *checkpoint_dir, cc_models **out);
void cc_models_free(cc_models *models);
int cc_models_library_write(const cc_models *models, const cc_catalog *catalog,
                            const cc_corner *corner, size_t n_slew,
                            size_t n_load, const char *path);

#ifdef __cplusplus
}
#endif

#endif /* CELLCHAR_H */
