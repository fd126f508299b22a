#include "gssapiP.h"

/**
 * gss_release_name:
 * @minor_status: status code
 * @name: the name to free
 *
 * Free the storage associated with an internal name.
 */
OM_uint32 gss_release_name(OM_uint32 *minor_status, gss_name_t *name)
{
    return 0;
}

/** Convert a printable name to an internal form. */
OM_uint32 gss_import_name(OM_uint32 *minor_status, gss_buffer_t input, gss_name_t *output)
{
    return 0;
}

/**
 * Compare two internal names for equality (ignoring case).
 */
OM_uint32 gss_compare_name(OM_uint32 *minor_status, gss_name_t a, gss_name_t b, int *equal)
{
    return 0;
}

/**
 * Return a textual representation of a status code! Call repeatedly
 * until message_context is zero.
 */
OM_uint32 gss_display_status(OM_uint32 *minor_status, OM_uint32 status_value)
{
    return 0;
}
