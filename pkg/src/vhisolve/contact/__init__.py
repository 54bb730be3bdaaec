"""P1 finite-element model of quasistatic viscoplastic frictional contact."""

from vhisolve.contact.mesh import (DEFAULT_TAGS, GAMMA1, GAMMA2, GAMMA3, Mesh,
                                   build_mesh)
from vhisolve.contact.model import (ContactAssembly, ContactData, ContactSolution,
                                    InternalState, Material, assemble_problem,
                                    contact_residuals, divergence_residual,
                                    postprocess, recover_stress,
                                    reconstruct_displacement, sigma_I_step,
                                    solve_contact)

__all__ = [
    "DEFAULT_TAGS", "GAMMA1", "GAMMA2", "GAMMA3", "Mesh", "build_mesh",
    "ContactAssembly", "ContactData", "ContactSolution", "InternalState", "Material",
    "assemble_problem", "contact_residuals", "divergence_residual", "postprocess",
    "recover_stress", "reconstruct_displacement", "sigma_I_step", "solve_contact",
]
