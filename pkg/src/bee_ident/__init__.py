"""Modified Bee Colony optimization and breakthrough-curve parameter identification."""
